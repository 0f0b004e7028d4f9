"""
The cellwise and casewise robust principal subspace fit. A rank-k model Z ≈ 1μᵀ + UVᵀ of the standardized data is
fit by iteratively reweighted least squares on a nested loss: cell residuals pass through a bounded ρ₁ and are
aggregated per case into a total deviation, which passes through a bounded ρ₂. Missing cells carry weight zero and
are never read.
"""

#  ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++   #
#  This file is part of cellrcov (cellwise Robust Regularized Covariance)                         #
#  Copyright © 2025 The cellrcov developers.                                                     #
#                                                                                                 #
#  This program is free software: you can redistribute it and/or modify it under the terms of     #
#  the GNU General Public License as published by the Free Software Foundation, either version    #
#  3 of the License, or (at your option) any later version.                                       #
#                                                                                                 #
#  This program is distributed in the hope that it will be useful, but WITHOUT ANY WARRANTY;      #
#  without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.      #
#  See the GNU General Public License for more details.                                           #
#                                                                                                 #
#  You should have received a copy of the GNU General Public License along with this program.     #
#  If not, see <http://www.gnu.org/licenses/>.                                                    #
#  ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++   #

from __future__ import annotations
import logging
import numpy as np
from .data import DataMatrix, as_data_matrix
from .errors import DegenerateColumn, DegenerateScale, EmptyRow, NoConvergence, RankDeficient
from .kernels import RhoParams, m_scale, m_scale_columns, rho, weight
from .settings import EstimatorSettings, estimator_settings

_CONDITION_LIMIT = 1e12
_JITTER = 1e-10


class SubspaceFit:

    """
    Output of :func:`fit_subspace`. All quantities are in standardized units.

    :ivar mu: center, a p-vector
    :ivar V: p × k loadings with orthonormal columns
    :ivar U: n × k scores, centered at their coordinatewise median
    :ivar sigma1: p-vector of cellwise residual scales (frozen from the initial fit)
    :ivar sigma2: casewise deviation scale (frozen from the initial fit)
    :ivar R: n × p residuals Z - 1μᵀ - UVᵀ on observed cells, zero on missing cells
    :ivar W_cell: n × p cellwise weights in [0, 1]
    :ivar w_case: n-vector of casewise weights in [0, 1]
    :ivar M: n × p boolean mask, True where observed
    :ivar objective_trace: loss after the initialization and after every iteration
    :ivar converged: False if the iteration cap was reached
    """

    def __init__(self, mu, V, U, sigma1, sigma2, R, W_cell, w_case, M, objective_trace, converged=True,
                 deviations=None):
        self.mu = mu
        self.V = V
        self.U = U
        self.sigma1 = sigma1
        self.sigma2 = float(sigma2)
        self.R = R
        self.W_cell = W_cell
        self.w_case = w_case
        self.M = M
        self.objective_trace = list(objective_trace)
        self.converged = converged
        self._deviations = deviations

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @property
    def fitted(self) -> np.ndarray:
        """The low-rank reconstruction Ẑ = 1μᵀ + UVᵀ (defined on every cell, observed or not)."""
        return self.mu[None, :] + self.U @ self.V.T

    @property
    def imputed(self) -> np.ndarray:
        """Ẑ + W̃ ⊙ R with W̃ = W_cell ⊙ M."""
        return self.fitted + self.W_cell * self.M * self.R

    @property
    def deviations(self) -> np.ndarray:
        """Casewise total deviations t̂ᵢ."""
        if self._deviations is None:
            raise AttributeError("Total deviations were not recorded on this fit.")
        return self._deviations

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def n_iterations(self) -> int:
        return len(self.objective_trace) - 1

    def __repr__(self):
        return "SubspaceFit(n={}, p={}, k={}, objective={:.6g}, iterations={})".format(
            self.U.shape[0], self.V.shape[0], self.rank, self.objective, self.n_iterations)


# ---------------------------------------------- Loss and weights ----------------------------------------------


def _total_deviations(R: np.ndarray, M: np.ndarray, sigma1: np.ndarray, params: RhoParams) -> np.ndarray:
    counts = M.sum(axis=1)
    if (counts == 0).any():
        raise EmptyRow("Case {} has no observed cells.".format(int(np.flatnonzero(counts == 0)[0])))
    contributions = np.where(M, sigma1[None, :] ** 2 * rho(R / sigma1[None, :], params), 0.0)
    return np.sqrt(contributions.sum(axis=1) / counts)


def total_deviation(row_residuals, mask, sigma1, params: RhoParams) -> float:
    """
    Casewise total deviation t̂ᵢ = sqrt((1/mᵢ) Σⱼ mᵢⱼ σ₁ⱼ² ρ₁(rᵢⱼ/σ₁ⱼ)) of one case.

    :param row_residuals: p-vector of cell residuals (entries under a False mask are ignored)
    :param mask: p-vector of booleans, True where observed
    :param sigma1: p-vector of cellwise scales
    :param params: ρ₁ constants
    :raises EmptyRow: if no cell is observed
    """
    mask = np.asarray(mask, dtype=bool)[None, :]
    residuals = np.where(mask, np.asarray(row_residuals, dtype=float)[None, :], 0.0)
    return float(_total_deviations(residuals, mask, np.asarray(sigma1, dtype=float), params)[0])


def _objective(residuals, M, sigma1, sigma2, params1, params2) -> float:
    deviations = _total_deviations(residuals, M, sigma1, params1)
    counts = M.sum(axis=1)
    return float(sigma2 ** 2 * np.sum(counts * rho(deviations / sigma2, params2)) / M.sum())


def _residuals(Z_filled, M, mu, U, V) -> np.ndarray:
    return np.where(M, Z_filled - mu[None, :] - U @ V.T, 0.0)


def loss(Z, fit: SubspaceFit, params1: RhoParams, params2: RhoParams) -> float:
    """
    The nested loss L = (σ₂²/m) Σᵢ mᵢ ρ₂(t̂ᵢ/σ₂), where mᵢ counts the observed cells of case i and m = Σ mᵢ.
    With ρ₁ = ρ₂ = t² and complete data this is the mean squared residual (1/(np)) Σ rᵢⱼ².

    :param Z: standardized data
    :param fit: the subspace parameters and frozen scales to evaluate
    :param params1: ρ₁ constants (cells)
    :param params2: ρ₂ constants (cases)
    """
    Z = as_data_matrix(Z)
    residuals = _residuals(Z.filled(), Z.mask, fit.mu, fit.U, fit.V)
    return _objective(residuals, Z.mask, fit.sigma1, fit.sigma2, params1, params2)


def cell_weights(R, sigma1, params1: RhoParams) -> np.ndarray:
    """
    Cellwise weights ψ₁(r/σ₁)/(r/σ₁) with weight 1 at a zero residual and exactly 0 beyond the cutoff c.

    :param R: n × p residuals
    :param sigma1: p-vector of positive cellwise scales
    :param params1: ρ₁ constants
    """
    R = np.asarray(R, dtype=float)
    return weight(R / np.asarray(sigma1, dtype=float)[None, :], params1)


def case_weights(fit: SubspaceFit, params2: RhoParams) -> np.ndarray:
    """Casewise weights ψ₂(t̂ᵢ/σ₂)/(t̂ᵢ/σ₂) of the fit's total deviations, with weight 1 at zero."""
    return weight(fit.deviations / fit.sigma2, params2)


def impute(Z, fit: SubspaceFit) -> DataMatrix:
    """
    The imputed matrix Ẑ + W̃ ⊙ R̂ with W̃ = W_cell ⊙ M. Missing cells become their fitted value, cells with weight
    one keep their observed value and cells beyond the cutoff are replaced by the fit.

    :param Z: the standardized data the fit was computed on
    :param fit: the subspace fit
    """
    Z = as_data_matrix(Z)
    fitted = fit.fitted
    residuals = _residuals(Z.filled(), Z.mask, fit.mu, fit.U, fit.V)
    return DataMatrix(fitted + fit.W_cell * Z.mask * residuals, columns=Z.columns)


# ---------------------------------------------- Weighted solves -----------------------------------------------


def _batched_solve(gram: np.ndarray, rhs: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """
    Solves a stack of small symmetric systems. Ill-conditioned systems receive a ridge of 1e-10·trace/dim, and
    systems with zero trace (every weight zero) return `fallback`.
    """
    dim = gram.shape[-1]
    traces = np.trace(gram, axis1=1, axis2=2)
    empty = traces <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        condition = np.linalg.cond(gram)
    shaky = ~np.isfinite(condition) | (condition > _CONDITION_LIMIT)
    gram = gram.copy()
    rhs = rhs.copy()
    gram[shaky] += (_JITTER * traces[shaky] / dim)[:, None, None] * np.eye(dim)
    gram[empty] = np.eye(dim)
    rhs[empty] = fallback[empty]
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def _check_observed_rank(M: np.ndarray, V: np.ndarray) -> None:
    gram = np.einsum("ij,ja,jb->iab", M.astype(float), V, V)
    ranks = np.linalg.matrix_rank(gram, hermitian=True)
    deficient = np.flatnonzero(ranks < V.shape[1])
    if len(deficient) > 0:
        raise RankDeficient("The loadings restricted to the {} observed cell(s) of case {} have rank {} < {}."
                            .format(int(M[deficient[0]].sum()), int(deficient[0]), int(ranks[deficient[0]]),
                                    V.shape[1]))


def _update_scores(Z_filled, M, mu, V, U_start, sigma1, params1, max_iterations, tolerance) -> np.ndarray:
    # inner IRLS over all cases at once; the case weight is a common factor of a row and drops out
    centered = np.where(M, Z_filled - mu[None, :], 0.0)
    U = U_start.copy()
    for _ in range(max_iterations):
        residuals = np.where(M, centered - U @ V.T, 0.0)
        weights = cell_weights(residuals, sigma1, params1) * M
        gram = np.einsum("ij,ja,jb->iab", weights, V, V)
        rhs = (weights * centered) @ V
        new_U = _batched_solve(gram, rhs, U)
        change = np.max(np.abs(new_U - U) / (1 + np.abs(U)))
        U = new_U
        if change < tolerance:
            break
    return U


def _update_loadings(Z_filled, M, U, weights, mu, V) -> tuple[np.ndarray, np.ndarray]:
    # weighted least squares of every column on the design [1, U]
    design = np.hstack([np.ones((U.shape[0], 1)), U])
    weights = weights * M
    gram = np.einsum("ij,ia,ib->jab", weights, design, design)
    rhs = np.einsum("ij,ia->ja", weights * np.where(M, Z_filled, 0.0), design)
    coefficients = _batched_solve(gram, rhs, np.hstack([mu[:, None], V]))
    return coefficients[:, 0], coefficients[:, 1:]


def solve_scores(z_row, mask, mu, V, sigma1, sigma2, params: RhoParams, max_iterations: int = 50,
                 tolerance: float = 1e-10) -> np.ndarray:
    """
    Scores of one case given the center and loadings: the minimizer of the case's term of the loss, found by an
    inner IRLS that recomputes cell weights from the current scores. At convergence (VᵀWV)u = VᵀW(z - μ) with W
    the diagonal of cell weights on observed coordinates.

    :param z_row: p-vector of standardized values (entries under a False mask are ignored)
    :param mask: p-vector of booleans, True where observed
    :param mu: p-vector center
    :param V: p × k loadings
    :param sigma1: p-vector of cellwise scales
    :param sigma2: casewise scale. The case weight is common to all cells of a case, so it does not move the
        minimizer; it is accepted for symmetry with the loss.
    :param params: ρ₁ constants
    :param max_iterations: cap on the IRLS iterations
    :param tolerance: convergence tolerance on the score change
    :return: k-vector of scores
    :raises RankDeficient: if V restricted to the observed coordinates has rank below k
    """
    mask = np.asarray(mask, dtype=bool)[None, :]
    z = np.where(mask, np.asarray(z_row, dtype=float)[None, :], 0.0)
    V = np.asarray(V, dtype=float)
    mu = np.asarray(mu, dtype=float)
    _check_observed_rank(mask, V)
    observed = mask[0]
    u_start = np.linalg.lstsq(V[observed], z[0, observed] - mu[observed], rcond=None)[0][None, :]
    return _update_scores(z, mask, mu, V, u_start, np.asarray(sigma1, dtype=float), params,
                          max_iterations, tolerance)[0]


# ----------------------------------------------- Initialization -----------------------------------------------


def _initial_fit(Z_filled, M, k, params1, params2):
    """
    Starting values. Cells lying more than c robust scales from their column median are set aside, every set-aside
    or missing cell is filled with its column median, and a rank-k SVD of the centered matrix gives the start.
    Cases with an outlying total deviation under that start are then left out of a second SVD.
    """
    n, p = Z_filled.shape
    if params1.is_quadratic:
        center = np.array([Z_filled[M[:, j], j].mean() for j in range(p)])
        filled = np.where(M, Z_filled, center[None, :])
    else:
        center = np.array([np.median(Z_filled[M[:, j], j]) for j in range(p)])
        marginal_scales = m_scale_columns(Z_filled - center[None, :], params1, M)
        flagged = M & (np.abs(Z_filled - center[None, :]) / marginal_scales[None, :] > params1.c)
        logging.debug("Initialization sets aside {} marginally outlying cell(s).".format(int(flagged.sum())))
        filled = np.where(M & ~flagged, Z_filled, center[None, :])
    centered = filled - center[None, :]
    V = np.linalg.svd(centered, full_matrices=False)[2][:k].T

    if not params1.is_quadratic:
        residuals = np.where(M, centered - centered @ V @ V.T, 0.0)
        try:
            scales = m_scale_columns(residuals, params1, M)
            deviations = _total_deviations(residuals, M, scales, params1)
            outlying = deviations / m_scale(deviations, params2) > params2.c
        except DegenerateScale:
            outlying = np.zeros(n, dtype=bool)
        if outlying.any() and (~outlying).sum() > k + 1:
            logging.debug("Initialization leaves out {} outlying case(s).".format(int(outlying.sum())))
            V = np.linalg.svd(centered[~outlying], full_matrices=False)[2][:k].T
    return center, V, centered @ V


# --------------------------------------------------- Fitting --------------------------------------------------


def _finalize(mu, V, U):
    # orthonormal loadings, then scores centered at their median
    Q, upper = np.linalg.qr(V)
    U = U @ upper.T
    shift = np.median(U, axis=0)
    return mu + Q @ shift, Q, U - shift[None, :]


def fit_subspace(Z, k: int, settings: EstimatorSettings = None) -> SubspaceFit:
    """
    Fits the rank-k robust principal subspace of the standardized data by alternating weighted least squares
    updates of (μ, V) given U and of U given (μ, V), recomputing cell and case weights before each half-step.
    The cellwise scales σ₁ⱼ and the case scale σ₂ are M-scales of the initial fit's residuals and stay fixed.

    :param Z: standardized data (:class:`~cellrcov.data.DataMatrix` or array, NaN for missing)
    :param k: rank, 1 ≤ k < min(n, p)
    :param settings: estimator settings (ρ families, tolerances, iteration caps); defaults to the global ones
    :return: a :class:`SubspaceFit` with orthonormal loadings
    :raises DegenerateColumn: if a column's residual scale is degenerate
    :raises NoConvergence: if the iteration cap is reached and settings.raise_on_no_convergence is set
    """
    settings = estimator_settings if settings is None else settings
    Z = as_data_matrix(Z)
    Z.check_partially_observed()
    n, p = Z.shape
    if not 1 <= k < min(n, p):
        raise ValueError("Rank must satisfy 1 <= k < min(n, p) = {}, got {}.".format(min(n, p), k))
    params1, params2 = settings.cell_rho_params(), settings.case_rho_params()
    Z_filled, M = Z.filled(), Z.mask

    mu, V, U = _initial_fit(Z_filled, M, k, params1, params2)
    _check_observed_rank(M, V)
    residuals = _residuals(Z_filled, M, mu, U, V)
    try:
        sigma1 = m_scale_columns(residuals, params1, M)
    except DegenerateScale as error:
        raise DegenerateColumn("residual scale is degenerate (\"{}\")".format(Z.columns[error.column]),
                               column=error.column) from None
    sigma2 = m_scale(_total_deviations(residuals, M, sigma1, params1), params2)

    trace = [_objective(residuals, M, sigma1, sigma2, params1, params2)]
    converged = False
    for iteration in range(settings.max_iterations):
        deviations = _total_deviations(residuals, M, sigma1, params1)
        weights = cell_weights(residuals, sigma1, params1) * weight(deviations / sigma2, params2)[:, None]
        mu, V = _update_loadings(Z_filled, M, U, weights, mu, V)
        U = _update_scores(Z_filled, M, mu, V, U, sigma1, params1, settings.max_inner_iterations,
                           settings.inner_tolerance)
        residuals = _residuals(Z_filled, M, mu, U, V)
        trace.append(_objective(residuals, M, sigma1, sigma2, params1, params2))
        logging.debug("Subspace fit iteration {}: objective {:.12g}".format(iteration + 1, trace[-1]))
        if trace[-2] - trace[-1] <= settings.tolerance * max(abs(trace[-2]), np.finfo(float).tiny):
            converged = True
            break

    if not converged:
        message = "Subspace fit did not converge in {} iterations.".format(settings.max_iterations)
        if settings.raise_on_no_convergence:
            raise NoConvergence(message, trace)
        logging.warning(message)

    mu, V, U = _finalize(mu, V, U)
    residuals = _residuals(Z_filled, M, mu, U, V)
    deviations = _total_deviations(residuals, M, sigma1, params1)
    return SubspaceFit(mu, V, U, sigma1, sigma2, residuals, cell_weights(residuals, sigma1, params1),
                       weight(deviations / sigma2, params2), M, trace, converged, deviations)


def cellpca_objective(Z, k: int, settings: EstimatorSettings = None) -> float:
    """
    The loss of a rank-k fit. For k = 0 it is evaluated on the deviations of every cell from its column median,
    with scales computed from those deviations.

    :param Z: standardized data
    :param k: rank (0 allowed)
    :param settings: estimator settings; defaults to the global ones
    """
    settings = estimator_settings if settings is None else settings
    Z = as_data_matrix(Z)
    if k > 0:
        return fit_subspace(Z, k, settings).objective
    params1, params2 = settings.cell_rho_params(), settings.case_rho_params()
    Z_filled, M = Z.filled(), Z.mask
    medians = np.array([np.median(Z_filled[M[:, j], j]) for j in range(Z.p)])
    residuals = np.where(M, Z_filled - medians[None, :], 0.0)
    sigma1 = m_scale_columns(residuals, params1, M)
    sigma2 = m_scale(_total_deviations(residuals, M, sigma1, params1), params2)
    return _objective(residuals, M, sigma1, sigma2, params1, params2)
