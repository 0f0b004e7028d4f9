"""
Deterministic Minimum Covariance Determinant estimation of location and scatter, used on the score matrix of the
subspace fit. Six deterministic starts are each refined by concentration steps, and the most concentrated
h-subset wins.
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
import math
import numpy as np
from scipy import linalg, stats
from .errors import NotPositiveDefinite, SingularScatter, TooFewCases
from .utilities import symmetrize

_MAX_C_STEPS = 100
_SINGULAR_RATIO = 1e-12


class McdResult:

    """
    Location and scatter of an h-subset.

    :param location: k-vector
    :param scatter: k × k consistency-corrected scatter matrix
    :param support: indices of the h retained cases, sorted
    :param raw_determinant: determinant of the uncorrected covariance of the support
    :param consistency_factor: factor applied to the raw covariance to obtain `scatter`
    """

    def __init__(self, location, scatter, support, raw_determinant: float, consistency_factor: float = 1.0):
        self.location = np.asarray(location, dtype=float)
        self.scatter = symmetrize(np.atleast_2d(np.asarray(scatter, dtype=float)))
        self.support = np.sort(np.asarray(support, dtype=int))
        self.raw_determinant = float(raw_determinant)
        self.consistency_factor = float(consistency_factor)

    @classmethod
    def from_support(cls, U: np.ndarray, support, consistency_factor: float = 1.0) -> McdResult:
        """
        Mean and (1/h) covariance of the given rows.

        :raises SingularScatter: if the rows lie in a lower-dimensional affine subspace
        """
        subset = U[np.asarray(support, dtype=int)]
        location = subset.mean(axis=0)
        raw = symmetrize(np.atleast_2d(np.cov(subset, rowvar=False, bias=True)))
        eigenvalues = np.linalg.eigvalsh(raw)
        if eigenvalues[0] <= _SINGULAR_RATIO * max(eigenvalues[-1], np.finfo(float).tiny):
            raise SingularScatter("The {} cases of the support lie in a lower-dimensional affine subspace."
                                  .format(len(subset)))
        return cls(location, consistency_factor * raw, support, float(np.prod(eigenvalues)), consistency_factor)

    @classmethod
    def classical(cls, U: np.ndarray) -> McdResult:
        """Sample mean and (1/n) covariance of all rows, with consistency factor 1."""
        U = _as_score_matrix(U)
        return cls.from_support(U, np.arange(U.shape[0]))

    @property
    def raw_scatter(self) -> np.ndarray:
        return self.scatter / self.consistency_factor

    def __repr__(self):
        return "McdResult(h={}, raw_determinant={:.6g}, consistency_factor={:.6g})".format(
            len(self.support), self.raw_determinant, self.consistency_factor)


def _as_score_matrix(U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    return U[:, None] if U.ndim == 1 else U


def mahalanobis_sq(X, location, scatter) -> np.ndarray:
    """
    Squared Mahalanobis distances of the rows of X, through a Cholesky factor of the scatter.

    :raises NotPositiveDefinite: if the scatter is not positive definite
    """
    X = _as_score_matrix(X)
    try:
        factor = linalg.cholesky(np.atleast_2d(scatter), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefinite("Scatter matrix is not positive definite.") from None
    solved = linalg.solve_triangular(factor, (X - np.asarray(location)[None, :]).T, lower=True)
    return np.sum(solved ** 2, axis=0)


def consistency_factor(alpha: float, k: int) -> float:
    """
    Factor making the raw MCD scatter unbiased at the Gaussian: α / F_{χ²(k+2)}(q_α), with q_α the α-quantile
    of χ²(k). Equals 1 at α = 1 and decreases in α.
    """
    if alpha >= 1:
        return 1.0
    return float(alpha / stats.chi2.cdf(stats.chi2.ppf(alpha, k), k + 2))


def c_step(U, current: McdResult, h: int = None) -> McdResult:
    """
    One concentration step: the h cases closest to the current estimate (in Mahalanobis distance) become the new
    support, whose mean and covariance are the new estimate. The determinant never increases.

    :param U: n × k data
    :param current: the current estimate
    :param h: support size; defaults to the size of the current support
    :raises SingularScatter: if a scatter involved is singular
    """
    U = _as_score_matrix(U)
    h = len(current.support) if h is None else h
    try:
        distances = mahalanobis_sq(U, current.location, current.scatter)
    except NotPositiveDefinite:
        raise SingularScatter("Cannot take a concentration step from a singular scatter.") from None
    support = np.argsort(distances, kind="stable")[:h]
    return McdResult.from_support(U, support, current.consistency_factor)


# ---------------------------------------------- Deterministic starts ----------------------------------------------


def _robust_scales(Y: np.ndarray) -> np.ndarray:
    scales = stats.median_abs_deviation(Y, axis=0, scale="normal")
    fallback = Y.std(axis=0)
    return np.where(scales > 0, scales, fallback)


def _spatial_median(Y: np.ndarray, start: np.ndarray = None, iterations: int = 200,
                    tolerance: float = 1e-10) -> np.ndarray:
    # Weiszfeld iterations
    center = np.median(Y, axis=0) if start is None else start
    for _ in range(iterations):
        distances = np.maximum(np.linalg.norm(Y - center[None, :], axis=1), 1e-12)
        new_center = (Y / distances[:, None]).sum(axis=0) / (1 / distances).sum()
        if np.linalg.norm(new_center - center) < tolerance * (1 + np.linalg.norm(center)):
            return new_center
        center = new_center
    return center


def _correlation(Y: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.corrcoef(Y, rowvar=False))


def _canonical_coordinates(U: np.ndarray, location: np.ndarray, scatter: np.ndarray) -> np.ndarray:
    """
    Coordinates of the rows of U that are unchanged by an affine map of the data (when location and scatter move
    along with it): whitened by the Cholesky factor of the scatter, centered at their spatial median, rotated onto
    the eigenvectors of the spatial sign covariance and oriented so that every coordinate has a positive third
    moment.

    :raises SingularScatter: if the scatter is not positive definite
    """
    try:
        factor = linalg.cholesky(np.atleast_2d(scatter), lower=True)
    except linalg.LinAlgError:
        raise SingularScatter("Cannot whiten the data by a singular scatter.") from None
    W = linalg.solve_triangular(factor, (U - np.asarray(location)[None, :]).T, lower=True).T
    # started from the mean, so that the iterations commute with rotations
    offsets = W - _spatial_median(W, W.mean(axis=0))[None, :]
    signs = offsets / np.maximum(np.linalg.norm(offsets, axis=1), np.finfo(float).tiny)[:, None]
    eigenvectors = np.linalg.eigh(symmetrize(signs.T @ signs / len(W)))[1][:, ::-1]
    Y = offsets @ eigenvectors
    return Y * np.where(np.sum(Y ** 3, axis=0) < 0, -1.0, 1.0)[None, :]


def _start_from_shape(Y: np.ndarray, shape: np.ndarray, h0: int) -> np.ndarray:
    """Turns a shape estimate into an initial h0-subset: eigenvectors of the shape, robust scales along them."""
    eigenvectors = np.linalg.eigh(symmetrize(shape))[1]
    rotated = Y @ eigenvectors
    scales = _robust_scales(rotated)
    if (scales <= 0).any():
        raise SingularScatter("Degenerate spread along an eigenvector of a starting shape.")
    center = np.median(rotated, axis=0)
    distances = np.sum(((rotated - center[None, :]) / scales[None, :]) ** 2, axis=1)
    return np.argsort(distances, kind="stable")[:h0]


def _initial_subsets(Y: np.ndarray, h0: int) -> list:
    Y = (Y - np.median(Y, axis=0)[None, :]) / np.maximum(_robust_scales(Y), np.finfo(float).tiny)[None, :]
    signs = Y / np.maximum(np.linalg.norm(Y, axis=1), np.finfo(float).tiny)[:, None]
    shapes = [
        _correlation(np.tanh(Y)),
        _correlation(stats.rankdata(Y, axis=0)),
        signs.T @ signs / len(Y),
    ]
    subsets = []
    for shape in shapes:
        try:
            subsets.append(_start_from_shape(Y, np.nan_to_num(shape), h0))
        except SingularScatter:
            subsets.append(None)
    subsets.append(np.argsort(np.abs(Y[:, 0]), kind="stable")[:h0])
    subsets.append(np.argsort(np.abs(Y[:, -1]), kind="stable")[:h0])
    spatial_median = _spatial_median(Y)
    subsets.append(np.argsort(np.linalg.norm(Y - spatial_median[None, :], axis=1), kind="stable")[:h0])
    return subsets


def _concentrate(U: np.ndarray, start: McdResult, h: int) -> McdResult:
    current = c_step(U, start, h)
    for step in range(_MAX_C_STEPS):
        following = c_step(U, current, h)
        if np.array_equal(following.support, current.support):
            logging.debug("Concentration converged after {} step(s).".format(step + 2))
            return following
        current = following
    return current


def _best_concentrated(U: np.ndarray, Y: np.ndarray, h: int, h0: int, factor: float,
                       best: McdResult = None) -> McdResult | None:
    for index, subset in enumerate(_initial_subsets(Y, h0)):
        if subset is None:
            continue
        try:
            candidate = _concentrate(U, McdResult.from_support(U, subset, factor), h)
        except SingularScatter:
            logging.debug("MCD start {} ended in a singular support.".format(index))
            continue
        if best is None or candidate.raw_determinant < best.raw_determinant:
            best = candidate
    return best


def mcd_estimate(U, alpha: float = 0.75) -> McdResult:
    """
    Deterministic, affine equivariant MCD. The starts are computed in coordinates that an affine map of the data
    does not change (see :func:`_canonical_coordinates`), first relative to the sample mean and covariance and then
    relative to the best estimate found so far. In each pass six starting subsets are derived (from the correlation
    of tanh-transformed data, the rank correlation, the spatial sign covariance, the central half of the first and
    of the last coordinate, and the cases nearest the spatial median) and each is concentrated to convergence. The
    support with the smallest determinant wins, ties going to the earlier start.

    :param U: n × k complete data
    :param alpha: coverage in [0.5, 1); the support has h = ceil(α·n) cases
    :return: the estimate, with scatter multiplied by :func:`consistency_factor`
    :raises TooFewCases: if n ≤ 2k
    :raises SingularScatter: if the data are degenerate or every start leads to a singular support
    """
    U = _as_score_matrix(U)
    n, k = U.shape
    if not 0.5 <= alpha < 1:
        raise ValueError("MCD coverage must be in [0.5, 1), got {}.".format(alpha))
    if n <= 2 * k:
        raise TooFewCases("MCD needs more than {} cases in dimension {}, got {}.".format(2 * k, k, n))
    if not np.isfinite(U).all():
        raise ValueError("MCD input must be complete.")
    h = int(math.ceil(alpha * n - 1e-9))
    h0 = int(math.ceil(n / 2))
    factor = consistency_factor(alpha, k)

    classical = McdResult.classical(U)
    best = _best_concentrated(U, _canonical_coordinates(U, classical.location, classical.raw_scatter), h, h0, factor)
    if best is None:
        raise SingularScatter("Every MCD start led to a singular support.")
    return _best_concentrated(U, _canonical_coordinates(U, best.location, best.raw_scatter), h, h0, factor, best)
