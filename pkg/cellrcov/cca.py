"""
Robust regularized canonical correlation analysis. The two blocks are estimated jointly by cellRCov, and the
canonical directions come from a whitened singular value decomposition of the cross-covariance block.
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
from scipy import linalg
from joblib import Parallel, delayed
from .covariance import CovarianceEstimate, estimate
from .data import DataMatrix, as_data_matrix
from .errors import BlockNotPD, CellRCovError, DimensionMismatch, InsufficientData, SingleCaseFold
from .metrics import mcc
from .settings import EstimatorSettings, estimator_settings
from .utilities import SavesToJSON, as_float_list, resolve_n_jobs, spawn_generators, symmetrize

_FOLD_STREAMS = 3


class CcaResult(SavesToJSON):

    """
    Canonical directions and correlations.

    :param A: p × k directions of the first block, normalized so that AᵀΣ₁A = I
    :param B: q × k directions of the second block, normalized so that BᵀΣ₂B = I
    :param correlations: k canonical correlations, nonincreasing
    :param centers: (p + q)-vector location of the joint data
    :param Sigma1: covariance block of the first block
    :param Sigma2: covariance block of the second block
    :param Sigma12: cross-covariance block
    :ivar estimate: the joint :class:`~cellrcov.covariance.CovarianceEstimate`, when fit from data
    """

    def __init__(self, A, B, correlations, centers, Sigma1, Sigma2, Sigma12):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.correlations = np.asarray(correlations, dtype=float)
        self.centers = np.asarray(centers, dtype=float)
        self.Sigma1 = np.asarray(Sigma1, dtype=float)
        self.Sigma2 = np.asarray(Sigma2, dtype=float)
        self.Sigma12 = np.asarray(Sigma12, dtype=float)
        self.estimate: CovarianceEstimate | None = None

    @property
    def k(self) -> int:
        return len(self.correlations)

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[0]

    def _to_dict(self) -> dict:
        return {"A": as_float_list(self.A), "B": as_float_list(self.B),
                "correlations": as_float_list(self.correlations), "centers": as_float_list(self.centers),
                "Sigma1": as_float_list(self.Sigma1), "Sigma2": as_float_list(self.Sigma2),
                "Sigma12": as_float_list(self.Sigma12)}

    @classmethod
    def _from_dict(cls, json_dict):
        return cls(**json_dict)

    def __repr__(self):
        return "CcaResult(p={}, q={}, correlations={})".format(self.p, self.q, self.correlations)


def _inverse_square_root(block: np.ndarray, name: str) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh(symmetrize(block))
    if eigenvalues[0] <= 1e-12 * max(abs(eigenvalues[-1]), np.finfo(float).tiny):
        raise BlockNotPD("The {} covariance block is not positive definite.".format(name))
    return (eigenvectors / np.sqrt(eigenvalues)[None, :]) @ eigenvectors.T


def _split_blocks(Sigma, p: int, k: int):
    Sigma = np.asarray(Sigma, dtype=float)
    q = Sigma.shape[0] - p
    if p < 1 or q < 1:
        raise DimensionMismatch("Cannot split a {0}×{0} matrix into blocks of sizes {1} and {2}.".format(
            Sigma.shape[0], p, q))
    if not 1 <= k <= min(p, q):
        raise ValueError("The number of canonical pairs must be between 1 and min(p, q) = {}, got {}."
                         .format(min(p, q), k))
    return Sigma[:p, :p], Sigma[p:, p:], Sigma[:p, p:]


def cca_from_covariance(Sigma, p: int, k: int, center=None) -> CcaResult:
    """
    Canonical correlation analysis of a joint covariance matrix whose first p variables form the first block.
    The singular value decomposition of Σ₁^{-1/2}Σ₁₂Σ₂^{-1/2} gives the correlations and, after unwhitening, the
    directions. Each direction of the first block is flipped so its largest-magnitude entry is positive, and its
    partner in the second block is flipped with it.

    :param Sigma: (p + q) × (p + q) joint covariance
    :param p: size of the first block
    :param k: number of canonical pairs, at most min(p, q)
    :param center: optional joint location (zeros by default)
    :raises BlockNotPD: if a diagonal block is not positive definite
    """
    Sigma1, Sigma2, Sigma12 = _split_blocks(Sigma, p, k)
    whiten1 = _inverse_square_root(Sigma1, "first")
    whiten2 = _inverse_square_root(Sigma2, "second")
    left, singular_values, right_t = np.linalg.svd(whiten1 @ Sigma12 @ whiten2)
    A = whiten1 @ left[:, :k]
    B = whiten2 @ right_t[:k].T
    for pair in range(k):
        if A[np.argmax(np.abs(A[:, pair])), pair] < 0:
            A[:, pair] *= -1
            B[:, pair] *= -1
    center = np.zeros(len(Sigma)) if center is None else center
    return CcaResult(A, B, np.clip(singular_values[:k], 0.0, 1.0), center, Sigma1, Sigma2, Sigma12)


def generalized_eigen_correlations(Sigma, p: int, k: int) -> np.ndarray:
    """
    The k largest canonical correlations from the eigenvalues of Σ₁⁻¹Σ₁₂Σ₂⁻¹Σ₂₁, solved directly as an
    unsymmetric eigenproblem.
    """
    Sigma1, Sigma2, Sigma12 = _split_blocks(Sigma, p, k)
    product = linalg.solve(Sigma1, Sigma12 @ linalg.solve(Sigma2, Sigma12.T))
    eigenvalues = np.sort(np.real(linalg.eigvals(product)))[::-1]
    return np.sqrt(np.clip(eigenvalues[:k], 0.0, None))


def _joint_estimate(joint: DataMatrix, settings: EstimatorSettings, method: str) -> CovarianceEstimate:
    if method == "cellrcov":
        return estimate(joint, settings)
    elif method == "rcov":
        from .simlab import baseline_rcov
        return baseline_rcov(joint, settings)
    raise ValueError("Unknown CCA method \"{}\"; use \"cellrcov\" or \"rcov\".".format(method))


def cellrcca_fit(X1, X2, k: int, settings: EstimatorSettings = None, method: str = "cellrcov") -> CcaResult:
    """
    Fits the joint covariance of the combined data (cellRCov, or the ridge-regularized sample covariance when
    method is "rcov") and extracts the canonical pairs from its blocks.

    :param X1: n × p first block
    :param X2: n × q second block
    :param k: number of canonical pairs
    :param settings: estimator settings; defaults to the global ones
    :param method: "cellrcov" or "rcov"
    :raises DimensionMismatch: if the blocks have different numbers of cases
    """
    settings = estimator_settings if settings is None else settings
    X1, X2 = as_data_matrix(X1), as_data_matrix(X2)
    if not 1 <= k <= min(X1.p, X2.p):
        raise ValueError("The number of canonical pairs must be between 1 and min(p, q) = {}, got {}."
                         .format(min(X1.p, X2.p), k))
    joint_estimate = _joint_estimate(X1.hstack(X2), settings, method)
    result = cca_from_covariance(joint_estimate.Sigma_hat, X1.p, k, joint_estimate.center)
    result.estimate = joint_estimate
    return result


def cellrcca_transform(result: CcaResult, X1, X2) -> tuple[np.ndarray, np.ndarray]:
    """
    Canonical variables (X₁ - 1μ₁ᵀ)A and (X₂ - 1μ₂ᵀ)B. Missing cells are replaced by the center.

    :raises DimensionMismatch: if the blocks do not match the fit
    """
    X1, X2 = as_data_matrix(X1), as_data_matrix(X2)
    if X1.p != result.p or X2.p != result.q:
        raise DimensionMismatch("Fit has blocks of sizes {} and {}, data has {} and {}.".format(
            result.p, result.q, X1.p, X2.p))
    if X1.n != X2.n:
        raise DimensionMismatch("Blocks have {} and {} cases.".format(X1.n, X2.n))
    center1, center2 = result.centers[:result.p], result.centers[result.p:]
    centered1 = np.where(X1.mask, X1.values - center1[None, :], 0.0)
    centered2 = np.where(X2.mask, X2.values - center2[None, :], 0.0)
    return centered1 @ result.A, centered2 @ result.B


def _fold_mcc(X1: DataMatrix, X2: DataMatrix, test_index, k, settings, method) -> float | None:
    train = np.setdiff1d(np.arange(X1.n), test_index)
    try:
        result = cellrcca_fit(X1.rows(train), X2.rows(train), k, settings, method)
        return mcc(*cellrcca_transform(result, X1.rows(test_index), X2.rows(test_index)))
    except (CellRCovError, ValueError, np.linalg.LinAlgError) as error:
        logging.warning("Dropping a cross-validation fold that failed: {}".format(error))
        return None


def cellrcca_cv(X1, X2, k: int, folds: int = 10, settings: EstimatorSettings = None,
                method: str = "cellrcov") -> float:
    """
    Cross-validated mean canonical correlation: each fold is left out in turn, the canonical pairs are fit on the
    rest, and the MCC of the left-out cases' canonical variables is averaged over folds.

    :param X1: first block
    :param X2: second block
    :param k: number of canonical pairs
    :param folds: number of folds
    :param settings: estimator settings (seed drives the fold assignment); defaults to the global ones
    :param method: "cellrcov" or "rcov"
    :raises SingleCaseFold: if a fold has fewer than 3 cases
    :raises InsufficientData: if fewer than half of the folds succeed
    """
    settings = estimator_settings if settings is None else settings
    X1, X2 = as_data_matrix(X1), as_data_matrix(X2)
    if X1.n != X2.n:
        raise DimensionMismatch("Blocks have {} and {} cases.".format(X1.n, X2.n))
    if folds < 2:
        raise ValueError("Cross-validation needs at least 2 folds, got {}.".format(folds))
    generator = spawn_generators(settings.seed, 1, _FOLD_STREAMS)[0]
    fold_indices = np.array_split(generator.permutation(X1.n), folds)
    if min(len(index) for index in fold_indices) < 3:
        raise SingleCaseFold("{} folds of {} cases leave fewer than 3 cases in a fold.".format(folds, X1.n))
    scores = Parallel(n_jobs=resolve_n_jobs(settings.n_jobs))(
        delayed(_fold_mcc)(X1, X2, np.sort(index), k, settings, method) for index in fold_indices
    )
    scores = [score for score in scores if score is not None]
    if len(scores) < math.ceil(folds / 2):
        raise InsufficientData("Only {} of {} cross-validation folds succeeded.".format(len(scores), folds))
    return float(np.mean(scores))
