"""
Univariate robust building blocks: the hyperbolic tangent ρ/ψ family, the M-scale, and robust column
standardization. Everything here works elementwise on numpy arrays.
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
from scipy import integrate, optimize, stats
from .data import DataMatrix, as_data_matrix
from .errors import DegenerateScale
from .utilities import memoize

_LOG_TEN = np.log(10.0)


@memoize
def _gaussian_consistency_factor(b: float, c: float, q1: float, q2: float) -> float:
    # a such that E[rho(Z / a)] = max(rho) / 2 for Z ~ N(0, 1)
    params = RhoParams(b, c, q1, q2)

    def expected_rho(a):
        inner = stats.chi2.cdf((a * b) ** 2, 3) / (2 * a ** 2)
        middle, _ = integrate.quad(lambda z: rho_tanh(z / a, params) * stats.norm.pdf(z), a * b, a * c,
                                   epsabs=1e-13, epsrel=1e-12)
        outer = params.d * stats.norm.sf(a * c)
        return 2 * (inner / 2 + middle + outer)

    return optimize.brentq(lambda a: expected_rho(a) - params.delta_m, 1e-3, 1e2, xtol=1e-14, rtol=1e-13)


class RhoParams:
    """
    Constants of a ρ function. The tanh family is quadratic on [0, b], blends into a constant through a log-cosh
    piece on [b, c] and is constant beyond c. The quadratic family (ρ(t) = t²) reproduces classical least squares.

    :param b: lower cutoff
    :param c: upper cutoff
    :param q1: shape constant
    :param q2: shape constant
    :param family: "tanh" or "quadratic"
    """

    def __init__(self, b: float = 1.5, c: float = 4.0, q1: float = 1.540793, q2: float = 0.8622731,
                 family: str = "tanh"):
        if family not in ("tanh", "quadratic"):
            raise ValueError("Unknown rho family \"{}\".".format(family))
        if family == "tanh" and not 0 < b < c:
            raise ValueError("Need 0 < b < c, got b={}, c={}.".format(b, c))
        self.b, self.c, self.q1, self.q2 = float(b), float(c), float(q1), float(q2)
        self.family = family

    @classmethod
    def quadratic(cls) -> RhoParams:
        """The classical family ρ(t) = t²."""
        return cls(family="quadratic")

    @property
    def is_quadratic(self) -> bool:
        return self.family == "quadratic"

    @property
    def d(self) -> float:
        """Plateau value max(ρ) (infinite for the quadratic family)."""
        if self.is_quadratic:
            return np.inf
        return self.b ** 2 / 2 + (self.q1 / self.q2) * _log_cosh(self.q2 * (self.c - self.b))

    @property
    def delta_m(self) -> float:
        """Right-hand side of the M-scale equation, max(ρ) / 2."""
        return 1.0 if self.is_quadratic else self.d / 2

    @property
    def a(self) -> float:
        """Gaussian consistency factor of the M-scale, derived numerically for the current constants."""
        if self.is_quadratic:
            return 1.0
        return _gaussian_consistency_factor(self.b, self.c, self.q1, self.q2)

    def to_dict(self) -> dict:
        return {"b": self.b, "c": self.c, "q1": self.q1, "q2": self.q2, "family": self.family}

    def __eq__(self, other):
        return isinstance(other, RhoParams) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(self.to_dict().items()))

    def __repr__(self):
        if self.is_quadratic:
            return "RhoParams.quadratic()"
        return "RhoParams(b={}, c={}, q1={}, q2={})".format(self.b, self.c, self.q1, self.q2)


def _log_cosh(x):
    return np.logaddexp(x, -x) - np.log(2.0)


def _scalar_or_array(result, t):
    return float(result) if np.ndim(t) == 0 else result


def rho_tanh(t, params: RhoParams):
    """
    The tanh ρ function. Even, nondecreasing in |t|, bounded by params.d and continuously differentiable.

    :param t: scalar or array
    :param params: the tanh constants
    """
    abs_t = np.abs(np.asarray(t, dtype=float))
    blend = params.d - (params.q1 / params.q2) * _log_cosh(params.q2 * (params.c - np.minimum(abs_t, params.c)))
    out = np.where(abs_t <= params.b, abs_t ** 2 / 2, np.where(abs_t <= params.c, blend, params.d))
    return _scalar_or_array(out, t)


def psi_tanh(t, params: RhoParams):
    """
    Derivative of :func:`rho_tanh`: equal to t on [-b, b], q1·tanh(q2(c - |t|))·sign(t) on b ≤ |t| ≤ c, and 0
    beyond c.
    """
    t_array = np.asarray(t, dtype=float)
    abs_t = np.abs(t_array)
    blend = params.q1 * np.tanh(params.q2 * (params.c - np.minimum(abs_t, params.c))) * np.sign(t_array)
    out = np.where(abs_t <= params.b, t_array, np.where(abs_t < params.c, blend, 0.0))
    return _scalar_or_array(out, t)


def rho(t, params: RhoParams):
    """ρ of either family."""
    if params.is_quadratic:
        return _scalar_or_array(np.asarray(t, dtype=float) ** 2, t)
    return rho_tanh(t, params)


def psi(t, params: RhoParams):
    """ψ = ρ' of either family."""
    if params.is_quadratic:
        return _scalar_or_array(2 * np.asarray(t, dtype=float), t)
    return psi_tanh(t, params)


def weight(t, params: RhoParams):
    """
    IRLS weight ψ(t)/t with the convention weight(0) = 1, clipped to [0, 1]. Identically 1 for the quadratic family.
    """
    t_array = np.asarray(t, dtype=float)
    if params.is_quadratic:
        return _scalar_or_array(np.ones_like(t_array), t)
    safe = np.where(t_array == 0, 1.0, t_array)
    out = np.where(t_array == 0, 1.0, psi_tanh(safe, params) / safe)
    return _scalar_or_array(np.clip(out, 0.0, 1.0), t)


# -------------------------------------------------- M-scales --------------------------------------------------


def m_scale_columns(residuals: np.ndarray, params: RhoParams = None, mask: np.ndarray = None) -> np.ndarray:
    """
    Solves the M-scale equation (1/n) Σ ρ(tᵢ / (a σ)) = δ for every column of a matrix at once. Missing entries
    (NaN, or False in `mask`) are skipped and n is the number of present values in the column.

    The root is bracketed on log σ starting from [MAD/10, 10·MAD], narrowed by bisection and polished by
    safeguarded Newton steps to a relative tolerance of 1e-10 or better.

    :param residuals: array of shape (n, p) (or (n,) for a single column)
    :param params: ρ constants; defaults to the standard tanh family
    :param mask: optional boolean array, True where present
    :return: array of p positive scales
    :raises DegenerateScale: for the first column with no values, or with more than half of its values exactly zero
    """
    params = RhoParams() if params is None else params
    t = np.asarray(residuals, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)[:, None]
    present = np.isfinite(t) if mask is None else (np.asarray(mask, dtype=bool) & np.isfinite(t))
    abs_t = np.where(present, np.abs(t), 0.0)
    counts = present.sum(axis=0)
    zeros = (present & (abs_t == 0)).sum(axis=0)

    for j in range(t.shape[1]):
        if counts[j] == 0:
            raise DegenerateScale("no values to compute a scale from", column=j)
        if zeros[j] > counts[j] / 2:
            raise DegenerateScale("more than half of the values are exactly zero", column=j)

    if params.is_quadratic:
        return np.sqrt((abs_t ** 2).sum(axis=0) / counts)

    a, target = params.a, params.delta_m

    def equation(log_sigma):
        scaled = abs_t / (a * np.exp(log_sigma))[None, :]
        return np.where(present, rho_tanh(scaled, params), 0.0).sum(axis=0) / counts - target

    def slope(log_sigma):
        scaled = abs_t / (a * np.exp(log_sigma))[None, :]
        return -np.where(present, psi_tanh(scaled, params) * scaled, 0.0).sum(axis=0) / counts

    mad = np.array([np.median(abs_t[present[:, j], j]) for j in range(t.shape[1])]) / stats.norm.ppf(0.75)
    mad = np.where(mad > 0, mad, abs_t.max(axis=0))
    lower = np.log(mad) - _LOG_TEN
    upper = np.log(mad) + _LOG_TEN

    # the left-hand side decreases in sigma: we need equation(lower) >= 0 >= equation(upper)
    for _ in range(60):
        too_high = equation(lower) < 0
        if not too_high.any():
            break
        logging.debug("Expanding M-scale bracket downwards for {} column(s).".format(int(too_high.sum())))
        lower = np.where(too_high, lower - _LOG_TEN, lower)
    else:
        column = int(np.flatnonzero(equation(lower) < 0)[0])
        raise DegenerateScale("the M-scale equation has no positive root", column=column)
    for _ in range(60):
        too_low = equation(upper) > 0
        if not too_low.any():
            break
        upper = np.where(too_low, upper + _LOG_TEN, upper)

    while np.max(upper - lower) > 1e-3:
        middle = (lower + upper) / 2
        positive = equation(middle) >= 0
        lower = np.where(positive, middle, lower)
        upper = np.where(positive, upper, middle)

    log_sigma = (lower + upper) / 2
    for _ in range(100):
        value = equation(log_sigma)
        lower = np.where(value >= 0, log_sigma, lower)
        upper = np.where(value >= 0, upper, log_sigma)
        derivative = slope(log_sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = log_sigma - value / derivative
        bisection = (lower + upper) / 2
        usable = (derivative < 0) & (newton > lower) & (newton < upper)
        new_log_sigma = np.where(usable, newton, bisection)
        step = np.abs(new_log_sigma - log_sigma)
        log_sigma = new_log_sigma
        if np.max(np.minimum(step, upper - lower)) < 1e-13:
            break
    return np.exp(log_sigma)


def m_scale(residuals, params: RhoParams = None) -> float:
    """
    M-scale of a univariate sample; NaN entries are treated as missing.

    :param residuals: vector of reals
    :param params: ρ constants; defaults to the standard tanh family
    :raises DegenerateScale: if more than half of the present entries are exactly zero
    """
    try:
        return float(m_scale_columns(np.asarray(residuals, dtype=float).ravel(), params)[0])
    except DegenerateScale as error:
        raise DegenerateScale(error.message.split(": ", 1)[-1]) from None


# ------------------------------------------ Robust standardization ------------------------------------------


class ScaleVector:
    """
    Per-column robust scales and centers.

    :param values: positive scales (data units)
    :param centers: column medians (data units)
    """

    def __init__(self, values, centers):
        self.values = np.asarray(values, dtype=float)
        self.centers = np.asarray(centers, dtype=float)

    def __repr__(self):
        return "ScaleVector(values={}, centers={})".format(self.values, self.centers)


def robust_standardize(X, params: RhoParams = None) -> tuple[DataMatrix, ScaleVector]:
    """
    Divides every column by the M-scale of its deviations from the column median: Z = X D⁻¹. Z itself is not
    centered, and missing cells remain missing.

    :param X: a :class:`~cellrcov.data.DataMatrix` or array
    :param params: ρ constants of the M-scale; defaults to the standard tanh family
    :return: tuple of (Z, D)
    :raises DegenerateScale: naming the first column with fewer than two distinct observed values or whose scale is
        degenerate
    """
    X = as_data_matrix(X)
    params = RhoParams() if params is None or params.is_quadratic else params
    for j in range(X.p):
        if len(np.unique(X.values[X.mask[:, j], j])) < 2:
            raise DegenerateScale("fewer than two distinct observed values (\"{}\")".format(X.columns[j]), column=j)
    centers = np.nanmedian(X.values, axis=0)
    scales = m_scale_columns(X.values - centers[None, :], params, X.mask)
    return X.scaled(scales), ScaleVector(scales, centers)
