"""
The cellRCov covariance estimate. The robustly standardized data are split into a low-rank part, whose scatter is
the MCD scatter of the robust principal scores, and a residual part, whose covariance is a cell and case weighted
residual covariance shrunk towards its own diagonal. Both are mapped back to data units.
Also home to rank selection by parallel analysis and to the cross-validated choice of the ridge parameter.
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
from typing import Callable, Sequence
import numpy as np
from joblib import Parallel, delayed
from .cellpca import SubspaceFit, cellpca_objective, fit_subspace, _objective, _total_deviations
from .data import DataMatrix, as_data_matrix
from .errors import CellRCovError, DegenerateNormalizer, InsufficientData, InvalidDelta, SingularScatter, \
    TooFewCases, stage
from .kernels import ScaleVector, m_scale, m_scale_columns, robust_standardize
from .mcd import McdResult, mcd_estimate
from .settings import EstimatorSettings, estimator_settings
from .utilities import SavesToJSON, as_float_list, frobenius, memoize, resolve_n_jobs, spawn_generators, symmetrize

# independent random stream families
_REFERENCE_STREAMS = 1
_SPLIT_STREAMS = 2


class CovarianceEstimate(SavesToJSON):

    """
    A covariance estimate together with the pieces it was assembled from. Estimators that do not go through a
    subspace fit (the baselines of :mod:`~cellrcov.simlab`) leave the subspace-related fields at None.

    :param D: the robust column scales (and medians) used for standardization
    :param Sigma_sub: p × p scatter of the low-rank part (standardized units)
    :param Sigma_perp: p × p weighted residual covariance (standardized units)
    :param Sigma_perp_R: the residual covariance after ridge regularization
    :param Sigma_hat: the final p × p estimate in data units
    :param center: p-vector location in data units
    :param rank_k: rank of the subspace
    :param ridge_delta: ridge parameter in (0, 1]
    :param b_norm: normalizer of the residual covariance
    :param fit: the :class:`~cellrcov.cellpca.SubspaceFit`, if available
    :param columns: variable names
    :param cell_weights: n × p cellwise weights
    :param case_weights: n-vector of casewise weights
    :param imputed: n × p imputed data in data units
    :param mask: n × p observation mask
    :param rank_fallback: True if rank selection found no structure and rank 1 was used instead
    """

    def __init__(self, D: ScaleVector, Sigma_sub, Sigma_perp, Sigma_perp_R, Sigma_hat, center, rank_k: int,
                 ridge_delta: float, b_norm: float = None, fit: SubspaceFit = None, columns: Sequence[str] = None,
                 cell_weights=None, case_weights=None, imputed=None, mask=None,
                 rank_fallback: bool = False):
        self.D = D
        self.Sigma_sub = _optional_array(Sigma_sub)
        self.Sigma_perp = _optional_array(Sigma_perp)
        self.Sigma_perp_R = _optional_array(Sigma_perp_R)
        self.Sigma_hat = np.asarray(Sigma_hat, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.rank_k = int(rank_k)
        self.ridge_delta = None if ridge_delta is None else float(ridge_delta)
        self.b_norm = None if b_norm is None else float(b_norm)
        self.fit = fit
        self.columns = list(columns) if columns is not None else [f"V{j + 1}" for j in range(len(self.center))]
        self.cell_weights = _optional_array(cell_weights)
        self.case_weights = _optional_array(case_weights)
        self.imputed = _optional_array(imputed)
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self.rank_fallback = bool(rank_fallback)
        #: if True, the imputed matrix is included in the JSON output
        self.export_imputed = False

    @property
    def p(self) -> int:
        return len(self.center)

    @property
    def flagged_cells(self) -> list[tuple[int, int]]:
        """(row, column) pairs of observed cells with cell weight below 0.5."""
        if self.cell_weights is None:
            return []
        flagged = self.cell_weights < 0.5
        if self.mask is not None:
            flagged &= self.mask
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(flagged))]

    def recompose(self) -> np.ndarray:
        """Σ̂ recomputed from its stored parts as D(Σ_sub + Σ_perp^R)D."""
        inner = self.Sigma_perp_R if self.Sigma_sub is None else self.Sigma_sub + self.Sigma_perp_R
        return symmetrize(self.D.values[:, None] * inner * self.D.values[None, :])

    def correlation(self) -> np.ndarray:
        """The correlation matrix implied by Σ̂."""
        standard_deviations = np.sqrt(np.diag(self.Sigma_hat))
        return self.Sigma_hat / np.outer(standard_deviations, standard_deviations)

    def principal_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Eigenvalues (descending) and eigenvectors of the low-rank part in data units, i.e. the robust principal
        axes. Only the first `rank_k` are meaningful.
        """
        if self.Sigma_sub is None:
            raise AttributeError("This estimate has no low-rank part.")
        eigenvalues, eigenvectors = np.linalg.eigh(symmetrize(self.D.values[:, None] * self.Sigma_sub
                                                              * self.D.values[None, :]))
        order = np.argsort(eigenvalues)[::-1][:self.rank_k]
        return eigenvalues[order], eigenvectors[:, order]

    def _to_dict(self) -> dict:
        json_dict = {
            "columns": self.columns,
            "Sigma_hat": as_float_list(self.Sigma_hat),
            "center": as_float_list(self.center),
            "scales": as_float_list(self.D.values),
            "medians": as_float_list(self.D.centers),
            "rank_k": self.rank_k,
            "rank_fallback": self.rank_fallback,
            "ridge_delta": self.ridge_delta,
            "b_norm": self.b_norm,
            "Sigma_sub": as_float_list(self.Sigma_sub),
            "Sigma_perp": as_float_list(self.Sigma_perp),
            "Sigma_perp_R": as_float_list(self.Sigma_perp_R),
            "cell_weights": as_float_list(self.cell_weights),
            "case_weights": as_float_list(self.case_weights),
            "flagged_cells": [list(cell) for cell in self.flagged_cells],
        }
        if self.Sigma_sub is not None:
            json_dict["axis_variances"] = as_float_list(self.principal_axes()[0])
        if self.export_imputed and self.imputed is not None:
            json_dict["imputed"] = as_float_list(self.imputed)
        return json_dict

    @classmethod
    def _from_dict(cls, json_dict):
        estimate = cls(
            ScaleVector(json_dict["scales"], json_dict["medians"]), json_dict["Sigma_sub"], json_dict["Sigma_perp"],
            json_dict["Sigma_perp_R"], json_dict["Sigma_hat"], json_dict["center"], json_dict["rank_k"],
            json_dict["ridge_delta"], json_dict["b_norm"], columns=json_dict["columns"],
            cell_weights=json_dict["cell_weights"], case_weights=json_dict["case_weights"],
            imputed=json_dict.get("imputed"), rank_fallback=json_dict.get("rank_fallback", False)
        )
        estimate.export_imputed = "imputed" in json_dict
        return estimate

    def __repr__(self):
        return "CovarianceEstimate(p={}, rank_k={}, ridge_delta={})".format(self.p, self.rank_k, self.ridge_delta)


def _optional_array(x):
    return None if x is None else np.asarray(x, dtype=float)


class RankSelection(SavesToJSON):

    """
    Outcome of parallel analysis.

    :param chosen_k: number of consecutive leading gaps exceeding their reference quantile
    :param observed_gaps: gaps ν_{s-1} - ν_s of the data, computed up to the first one that fails
    :param reference_quantiles: the reference quantile of the gap at every rank up to the maximum
    :param percentile: percentile used for the reference quantiles
    :param n_reference: number of simulated reference datasets
    """

    def __init__(self, chosen_k: int, observed_gaps, reference_quantiles, percentile: float, n_reference: int):
        self.chosen_k = int(chosen_k)
        self.observed_gaps = np.asarray(observed_gaps, dtype=float)
        self.reference_quantiles = np.asarray(reference_quantiles, dtype=float)
        self.percentile = float(percentile)
        self.n_reference = int(n_reference)

    def _to_dict(self) -> dict:
        return {"chosen_k": self.chosen_k, "observed_gaps": as_float_list(self.observed_gaps),
                "reference_quantiles": as_float_list(self.reference_quantiles), "percentile": self.percentile,
                "n_reference": self.n_reference}

    @classmethod
    def _from_dict(cls, json_dict):
        return cls(**json_dict)

    def __repr__(self):
        return "RankSelection(chosen_k={}, observed_gaps={})".format(self.chosen_k, self.observed_gaps)


# ------------------------------------------------ Building blocks ------------------------------------------------


def sigma_sub(fit: SubspaceFit, mcd: McdResult) -> np.ndarray:
    """V Σ_MCD(U) Vᵀ, a positive semidefinite matrix of rank at most k."""
    return symmetrize(fit.V @ mcd.scatter @ fit.V.T)


def _weighted_residual_covariance(R, W_cell, w_case, M) -> tuple[np.ndarray, float]:
    p = R.shape[1]
    cell_weights = W_cell * M
    weighted = cell_weights * np.where(M, R, 0.0)
    normalizer = float(np.sum(w_case * cell_weights.sum(axis=1) ** 2) / p ** 2)
    if not normalizer > 0:
        raise DegenerateNormalizer("Every case is fully downweighted; the residual covariance has no normalizer.")
    return symmetrize((weighted * w_case[:, None]).T @ weighted / normalizer), normalizer


def sigma_perp(fit: SubspaceFit) -> tuple[np.ndarray, float]:
    """
    The weighted residual covariance (1/b) Σᵢ wᵢᶜᵃˢᵉ (W̃ᵢ rᵢ)(W̃ᵢ rᵢ)ᵀ with W̃ = W_cell ⊙ M and normalizer
    b = Σᵢ wᵢᶜᵃˢᵉ (Σⱼ W̃ᵢⱼ)² / p². Missing cells contribute nothing.

    :return: tuple of (matrix, b)
    :raises DegenerateNormalizer: if b ≤ 0
    """
    return _weighted_residual_covariance(fit.R, fit.W_cell, fit.w_case, fit.M)


def ridge_regularize(S, delta: float) -> np.ndarray:
    """
    (1 - δ)S + δ·diag(S). The diagonal is left unchanged.

    :raises InvalidDelta: if δ is outside (0, 1]
    """
    if not 0 < delta <= 1:
        raise InvalidDelta("The ridge parameter must lie in (0, 1], got {}.".format(delta))
    S = np.asarray(S, dtype=float)
    return (1 - delta) * S + delta * np.diag(np.diag(S))


# ------------------------------------------------- Rank selection ------------------------------------------------


def _classical_objectives(Z: np.ndarray, max_rank: int, settings: EstimatorSettings) -> np.ndarray:
    # the objective of classical PCA fits of every rank, evaluated with the robust loss
    params1, params2 = settings.cell_rho_params(), settings.case_rho_params()
    M = np.ones(Z.shape, dtype=bool)
    objectives = [cellpca_objective(Z, 0, settings)]
    centered = Z - Z.mean(axis=0)[None, :]
    _, singular_values, right = np.linalg.svd(centered, full_matrices=False)
    for rank in range(1, max_rank + 1):
        residuals = centered - centered @ right[:rank].T @ right[:rank]
        sigma1 = m_scale_columns(residuals, params1)
        sigma2 = m_scale(_total_deviations(residuals, M, sigma1, params1), params2)
        objectives.append(_objective(residuals, M, sigma1, sigma2, params1, params2))
    return np.array(objectives)


def _reference_gaps(n: int, p: int, max_rank: int, settings: EstimatorSettings, generator) -> np.ndarray:
    Z, _ = robust_standardize(generator.standard_normal((n, p)), settings.cell_rho_params())
    return -np.diff(_classical_objectives(Z.values, max_rank, settings))


@memoize
def _reference_quantiles(n: int, p: int, max_rank: int, settings_items: tuple, n_jobs: int) -> np.ndarray:
    settings = EstimatorSettings(_settings_from_items(settings_items), suppress_warnings=True,
                                persist_repairs=False)
    generators = spawn_generators(settings.seed, settings.pa_references, _REFERENCE_STREAMS)
    gaps = Parallel(n_jobs=n_jobs)(
        delayed(_reference_gaps)(n, p, max_rank, settings, generator) for generator in generators
    )
    return np.percentile(np.stack(gaps), settings.pa_percentile, axis=0)


def select_rank(Z, settings: EstimatorSettings = None) -> RankSelection:
    """
    Parallel analysis. The objective ν_s of the rank-s robust fit is computed for s = 0, 1, ... (ν₀ on the
    deviations from the column medians), and the gap ν_{s-1} - ν_s is compared to the given percentile of the same
    gap over simulated standard Gaussian datasets of equal size, fit by classical PCA and evaluated with the robust
    loss. The chosen rank is the number of consecutive leading gaps that exceed their reference; gaps are computed
    only until the first one that does not.

    :param Z: standardized data
    :param settings: estimator settings (pa_references, pa_percentile, pa_max_rank, seed, n_jobs)
    :return: a :class:`RankSelection`; chosen_k may be 0
    """
    settings = estimator_settings if settings is None else settings
    Z = as_data_matrix(Z)
    max_rank = min(Z.n - 1, Z.p - 1, settings.pa_max_rank)
    settings_items = tuple(sorted((key, _hashable(value)) for key, value in settings._to_dict().items()))
    reference = _reference_quantiles(Z.n, Z.p, max_rank, settings_items, resolve_n_jobs(settings.n_jobs))

    previous = cellpca_objective(Z, 0, settings)
    gaps = []
    chosen_k = 0
    for rank in range(1, max_rank + 1):
        current = cellpca_objective(Z, rank, settings)
        gaps.append(previous - current)
        logging.debug("Parallel analysis rank {}: gap {:.6g}, reference {:.6g}".format(
            rank, gaps[-1], reference[rank - 1]))
        if gaps[-1] <= reference[rank - 1]:
            break
        chosen_k = rank
        previous = current
    logging.info("Parallel analysis selected rank {}.".format(chosen_k))
    return RankSelection(chosen_k, gaps, reference, settings.pa_percentile, settings.pa_references)


def _hashable(value):
    if isinstance(value, dict):
        return tuple(sorted((k, _hashable(v)) for k, v in value.items()))
    if isinstance(value, list):
        return tuple(_hashable(x) for x in value)
    return value


def _settings_from_items(items) -> dict:
    return {key: _unhash(value) for key, value in items}


def _unhash(value):
    if isinstance(value, tuple) and all(isinstance(x, tuple) and len(x) == 2 and isinstance(x[0], str)
                                        for x in value) and len(value) > 0:
        return {k: _unhash(v) for k, v in value}
    if isinstance(value, tuple):
        return [_unhash(x) for x in value]
    return value


# ------------------------------------------------- Delta selection -----------------------------------------------


def choose_delta(pairs: Sequence[tuple[np.ndarray, np.ndarray]], grid: Sequence[float]) -> float:
    """
    The grid value minimizing the mean Frobenius distance between the regularized first matrix and the unregularized
    second matrix of every pair. Ties go to the larger δ.

    :param pairs: list of (training matrix, validation matrix) tuples
    :param grid: candidate ridge parameters
    """
    grid = sorted(set(float(x) for x in grid), reverse=True)
    losses = np.array([np.mean([frobenius(ridge_regularize(first, delta) - second) for first, second in pairs])
                       for delta in grid])
    best = losses.min()
    return grid[int(np.flatnonzero(losses <= best + 1e-12 * max(abs(best), 1.0))[0])]


def _split_pair(Z: DataMatrix, subset_covariance: Callable, generator) -> tuple[np.ndarray, np.ndarray] | None:
    permutation = generator.permutation(Z.n)
    first_size = Z.n // 3
    try:
        return subset_covariance(Z.rows(permutation[:first_size])), subset_covariance(Z.rows(permutation[first_size:]))
    except (CellRCovError, ValueError, np.linalg.LinAlgError) as error:
        logging.warning("Dropping a cross-validation split that failed: {}".format(error))
        return None


def cross_validate_delta(Z, subset_covariance: Callable[[DataMatrix], np.ndarray],
                         settings: EstimatorSettings = None) -> float:
    """
    Chooses the ridge parameter by random splits of the cases into parts of sizes floor(n/3) and n - floor(n/3).
    The covariance computed from the first part, regularized, should be close to that of the second part.

    :param Z: data
    :param subset_covariance: function computing the (unregularized) covariance of a subset of the cases
    :param settings: estimator settings (delta_grid, cv_splits, seed, n_jobs)
    :raises InsufficientData: if fewer than two splits succeed
    """
    settings = estimator_settings if settings is None else settings
    grid = list(settings.delta_grid)
    if len(set(grid)) == 1:
        return float(grid[0])
    Z = as_data_matrix(Z)
    generators = spawn_generators(settings.seed, settings.cv_splits, _SPLIT_STREAMS)
    pairs = Parallel(n_jobs=resolve_n_jobs(settings.n_jobs))(
        delayed(_split_pair)(Z, subset_covariance, generator) for generator in generators
    )
    pairs = [pair for pair in pairs if pair is not None]
    if len(pairs) < 2:
        raise InsufficientData("Only {} cross-validation split(s) succeeded; at least 2 are needed."
                               .format(len(pairs)))
    delta = choose_delta(pairs, grid)
    logging.info("Cross-validation selected ridge parameter {}.".format(delta))
    return delta


def _subset_sigma_perp(Z: DataMatrix, k: int, settings: EstimatorSettings) -> np.ndarray:
    return sigma_perp(fit_subspace(Z, k, settings))[0]


def select_delta(Z, k: int, settings: EstimatorSettings = None) -> float:
    """
    Cross-validated ridge parameter of the residual covariance for a rank-k fit of the standardized data, using
    :func:`cross_validate_delta` with the residual covariance of a rank-k fit of each subset.
    """
    settings = estimator_settings if settings is None else settings
    return cross_validate_delta(Z, lambda subset: _subset_sigma_perp(subset, k, settings), settings)


# ---------------------------------------------------- Estimate ---------------------------------------------------


def _score_scatter(U: np.ndarray, settings: EstimatorSettings) -> McdResult:
    if settings.score_scatter == "sample":
        return McdResult.classical(U)
    try:
        return mcd_estimate(U, settings.alpha)
    except (SingularScatter, TooFewCases) as error:
        logging.warning("MCD of the scores failed ({}); using their sample covariance instead.".format(error))
        return McdResult.classical(U)


def estimate(X, settings: EstimatorSettings = None) -> CovarianceEstimate:
    """
    The cellRCov estimate: robust standardization, a rank-k robust subspace fit, the MCD scatter of its scores, the
    weighted residual covariance with ridge regularization, and the map back to data units,
    Σ̂ = D(VΣ_MCD Vᵀ + Σ_perp^R)D. The rank and the ridge parameter come from the settings or are selected
    automatically (rank first, then δ given the rank).

    :param X: data (:class:`~cellrcov.data.DataMatrix`, data frame or array with NaN for missing cells)
    :param settings: estimator settings; defaults to the global ones
    :raises CellRCovError: tagged with the stage it came from
    """
    settings = estimator_settings if settings is None else settings
    X = as_data_matrix(X)
    with stage("input"):
        if X.n < 5:
            raise TooFewCases("cellRCov needs at least 5 cases, got {}.".format(X.n))
        if X.p < 2:
            raise InsufficientData("cellRCov needs at least 2 variables, got {}.".format(X.p))
        X.check_partially_observed()
    with stage("standardize"):
        Z, D = robust_standardize(X, settings.cell_rho_params())

    with stage("select_rank"):
        k = settings.rank if settings.rank is not None else select_rank(Z, settings).chosen_k
    rank_fallback = k == 0
    if rank_fallback:
        logging.warning("Parallel analysis found no structure; proceeding with rank 1.")
        k = 1
    if k >= min(X.n, X.p):
        raise ValueError("Rank {} is too large for {} cases and {} variables.".format(k, X.n, X.p))

    with stage("cellpca"):
        fit = fit_subspace(Z, k, settings)
    with stage("mcd"):
        scatter = _score_scatter(fit.U, settings)
    with stage("sigma_perp"):
        sub = sigma_sub(fit, scatter)
        perp, b_norm = sigma_perp(fit)
    with stage("select_delta"):
        delta = settings.delta if settings.delta is not None else select_delta(Z, k, settings)
    with stage("ridge"):
        perp_r = ridge_regularize(perp, delta)

    scales = D.values
    sigma_hat = symmetrize(scales[:, None] * (sub + perp_r) * scales[None, :])
    return CovarianceEstimate(
        D, sub, perp, perp_r, sigma_hat, scales * fit.mu, k, delta, b_norm, fit, X.columns,
        cell_weights=fit.W_cell, case_weights=fit.w_case, imputed=fit.imputed * scales[None, :], mask=X.mask,
        rank_fallback=rank_fallback
    )
