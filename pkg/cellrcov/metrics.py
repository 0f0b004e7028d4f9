"""
Evaluation metrics: the Kullback-Leibler discrepancy between covariance matrices, Mahalanobis distances and the
anomaly rule built on them, ROC curves, and rank correlations.
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
import numpy as np
from scipy import linalg, stats
from sklearn.metrics import auc, roc_curve
from .data import DataMatrix
from .errors import ConstantInput, DimensionMismatch, NotPositiveDefinite, SingleClass
from .mcd import mahalanobis_sq


class RocCurve:

    """
    A receiver operating characteristic curve.

    :ivar thresholds: score thresholds in decreasing order (the first one is +inf, flagging nothing)
    :ivar tpr: true positive rate at each threshold
    :ivar fpr: false positive rate at each threshold
    :ivar auc: trapezoidal area under the curve
    """

    def __init__(self, thresholds, tpr, fpr, auc_value: float):
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.tpr = np.asarray(tpr, dtype=float)
        self.fpr = np.asarray(fpr, dtype=float)
        self.auc = float(auc_value)

    def __repr__(self):
        return "RocCurve(auc={:.6g}, points={})".format(self.auc, len(self.thresholds))


def _cholesky(matrix: np.ndarray, name: str) -> np.ndarray:
    try:
        return linalg.cholesky(np.asarray(matrix, dtype=float), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefinite("{} is not positive definite.".format(name)) from None


def kl_discrepancy(S_hat, S_true) -> float:
    """
    trace(Σ̂Σ⁻¹ - I) - log det(Σ̂Σ⁻¹), computed through the congruent matrix L⁻¹Σ̂L⁻ᵀ with Σ = LLᵀ.

    :param S_hat: estimated covariance
    :param S_true: reference covariance
    :raises NotPositiveDefinite: if either matrix is not positive definite
    """
    lower = _cholesky(S_true, "The reference covariance")
    half = linalg.solve_triangular(lower, np.asarray(S_hat, dtype=float), lower=True)
    congruent = linalg.solve_triangular(lower, half.T, lower=True)
    congruent = (congruent + congruent.T) / 2
    log_det = 2 * np.sum(np.log(np.diag(_cholesky(congruent, "The estimated covariance"))))
    return float(np.trace(congruent) - len(congruent) - log_det)


def mahalanobis(X, center, Sigma) -> np.ndarray:
    """
    Mahalanobis distances sqrt((xᵢ - μ)ᵀΣ⁻¹(xᵢ - μ)) of the rows of X. Rows must be complete.

    :raises NotPositiveDefinite: if Σ is not positive definite
    """
    values = X.values if isinstance(X, DataMatrix) else np.atleast_2d(np.asarray(X, dtype=float))
    if not np.isfinite(values).all():
        raise ValueError("Mahalanobis distances need complete rows; impute missing cells first.")
    if values.shape[1] != len(center):
        raise DimensionMismatch("Rows have {} coordinates but the center has {}.".format(values.shape[1],
                                                                                         len(center)))
    return np.sqrt(mahalanobis_sq(values, center, Sigma))


def detection_threshold(p: int, quantile: float = 0.99) -> float:
    """Square root of the χ²_p quantile: the default cutoff for Mahalanobis distances of Gaussian data."""
    return float(np.sqrt(stats.chi2.ppf(quantile, p)))


def anomaly_flags(distances, threshold: float) -> np.ndarray:
    """True for every case whose distance exceeds the threshold."""
    return np.asarray(distances, dtype=float) > threshold


def roc_auc(scores, labels) -> RocCurve:
    """
    ROC curve over all distinct thresholds, with higher scores meaning "more anomalous". The area equals the
    Mann-Whitney statistic with ties counted half.

    :param scores: n scores
    :param labels: n binary labels (1 or True for positives)
    :raises SingleClass: if only one class is present
    """
    labels = np.asarray(labels).astype(int)
    scores = np.asarray(scores, dtype=float)
    if len(labels) != len(scores):
        raise DimensionMismatch("Got {} scores but {} labels.".format(len(scores), len(labels)))
    if len(np.unique(labels)) < 2:
        raise SingleClass("ROC analysis needs both positive and negative cases.")
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    return RocCurve(thresholds, tpr, fpr, auc(fpr, tpr))


def spearman_corr(x, y) -> float:
    """
    Spearman rank correlation: the Pearson correlation of average ranks.

    :raises ConstantInput: if either argument is constant
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise DimensionMismatch("Arguments have lengths {} and {}.".format(len(x), len(y)))
    if len(x) < 3:
        raise ValueError("Rank correlation needs at least 3 pairs, got {}.".format(len(x)))
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ConstantInput("Rank correlation of a constant vector is undefined.")
    x_ranks = stats.rankdata(x)
    y_ranks = stats.rankdata(y)
    x_ranks -= x_ranks.mean()
    y_ranks -= y_ranks.mean()
    value = np.dot(x_ranks, y_ranks) / np.sqrt(np.dot(x_ranks, x_ranks) * np.dot(y_ranks, y_ranks))
    return float(np.clip(value, -1.0, 1.0))


def mcc(U_test, V_test) -> float:
    """Mean canonical correlation: the average Spearman correlation of paired canonical variables."""
    U_test = np.asarray(U_test, dtype=float)
    V_test = np.asarray(V_test, dtype=float)
    U_test = U_test[:, None] if U_test.ndim == 1 else U_test
    V_test = V_test[:, None] if V_test.ndim == 1 else V_test
    if U_test.shape != V_test.shape:
        raise DimensionMismatch("Canonical variables have shapes {} and {}.".format(U_test.shape, V_test.shape))
    return float(np.mean([spearman_corr(U_test[:, j], V_test[:, j]) for j in range(U_test.shape[1])]))
