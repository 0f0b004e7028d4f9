"""
Monte Carlo laboratory: covariance models, contamination and missingness injectors, the baseline estimators
(ridge-regularized sample covariance and a Spearman-based estimator), block generators for canonical correlation
experiments, and the experiment runner producing Kullback-Leibler tables.
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
import itertools
import logging
import time
from typing import Sequence
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from .cca import CcaResult, cellrcca_fit
from .covariance import CovarianceEstimate, cross_validate_delta, estimate, ridge_regularize
from .data import DataMatrix, as_data_matrix
from .errors import CellRCovError, InfeasibleNaRate, InsufficientData
from .kernels import ScaleVector, m_scale_columns, robust_standardize
from .metrics import kl_discrepancy
from .settings import EstimatorSettings, SimulationSettings, estimator_settings, simulation_settings
from .utilities import SavesToJSON, as_float_list, make_generator, resolve_n_jobs, symmetrize
from ._parsing import parse_grid

models = ("A09", "A06", "planar", "dense")
scenarios = ("none", "cellwise", "casewise", "both")

_PLANAR_TAIL = 0.01
_NA_ATTEMPTS = 100


# ------------------------------------------------- Covariance models ----------------------------------------------


def make_sigma(model: str, p: int) -> np.ndarray:
    """
    Covariance models with unit diagonal. A09 and A06 have entries (-0.9)^|j-l| and (-0.6)^|j-l|, dense has 0.8
    off the diagonal, and planar shares the eigenvectors of A09 with eigenvalues such that the first component
    explains 53% of the total variance and the first two 90%, the rest being equal and tiny.

    :param model: one of "A09", "A06", "planar" and "dense"
    :param p: dimension, at least 2
    """
    if p < 2:
        raise ValueError("Covariance models need p >= 2, got {}.".format(p))
    distances = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    if model == "A09":
        return (-0.9) ** distances
    elif model == "A06":
        return (-0.6) ** distances
    elif model == "dense":
        return np.where(distances == 0, 1.0, 0.8)
    elif model == "planar":
        eigenvectors = np.linalg.eigh((-0.9) ** distances)[1][:, ::-1]
        tail = _PLANAR_TAIL * (p - 2)
        total = 10 * tail if p > 2 else 1.0
        eigenvalues = np.concatenate([[0.53 * total, 0.37 * total], np.full(p - 2, _PLANAR_TAIL)])
        if p == 2:
            eigenvalues = np.array([0.53, 0.47])
        sigma = (eigenvectors * eigenvalues[None, :]) @ eigenvectors.T
        scales = np.sqrt(np.diag(sigma))
        return symmetrize(sigma / np.outer(scales, scales))
    raise ValueError("Unknown covariance model \"{}\"; use one of {}.".format(model, ", ".join(models)))


# -------------------------------------------------- Experiment specs ----------------------------------------------


class ExperimentSpec(SavesToJSON):

    """
    One simulation scenario.

    :param model: covariance model (see :func:`make_sigma`)
    :param p: dimension
    :param n: number of cases
    :param contamination: "none", "cellwise", "casewise" or "both"
    :param gamma: contamination severity, at least 0
    :param cell_rate: fraction of contaminated cells in the cellwise scenario
    :param case_rate: fraction of contaminated cases in the casewise scenario
    :param mixed_rate: fraction of contaminated cells, and of contaminated cases, in the "both" scenario
    :param na_rate: fraction of missing cells (never overlapping contaminated cells)
    :param replications: number of simulated datasets
    :param seed: seed of the experiment
    :param estimators: names of the estimators to compare ("cellRCov", "RCov", "Spearman")
    """

    def __init__(self, model: str = "A09", p: int = 30, n: int = 100, contamination: str = "cellwise",
                 gamma: float = 6.0, cell_rate: float = 0.2, case_rate: float = 0.2, mixed_rate: float = 0.1,
                 na_rate: float = 0.0, replications: int = 200, seed: int = 20160415,
                 estimators: Sequence[str] = ("cellRCov", "RCov", "Spearman")):
        if model not in models:
            raise ValueError("Unknown covariance model \"{}\"; use one of {}.".format(model, ", ".join(models)))
        if contamination not in scenarios:
            raise ValueError("Unknown contamination \"{}\"; use one of {}.".format(
                contamination, ", ".join(scenarios)))
        for name, rate in (("cell_rate", cell_rate), ("case_rate", case_rate), ("mixed_rate", mixed_rate),
                           ("na_rate", na_rate)):
            if not 0 <= rate <= 1:
                raise ValueError("{} must be in [0, 1], got {}.".format(name, rate))
        if self._contaminated_cell_rate(contamination, cell_rate, mixed_rate) + na_rate > 1:
            raise ValueError("Contaminated and missing cells cannot exceed all cells.")
        if gamma < 0:
            raise ValueError("gamma must be nonnegative, got {}.".format(gamma))
        unknown = [name for name in estimators if name not in estimator_functions]
        if len(unknown) > 0:
            raise ValueError("Unknown estimator(s) {}.".format(", ".join(unknown)))
        if int(replications) < 1:
            raise ValueError("At least one replication is needed.")
        self.model = model
        self.p = int(p)
        self.n = int(n)
        self.contamination = contamination
        self.gamma = float(gamma)
        self.cell_rate = float(cell_rate)
        self.case_rate = float(case_rate)
        self.mixed_rate = float(mixed_rate)
        self.na_rate = float(na_rate)
        self.replications = int(replications)
        self.seed = int(seed)
        self.estimators = list(estimators)

    @staticmethod
    def _contaminated_cell_rate(contamination, cell_rate, mixed_rate):
        return {"cellwise": cell_rate, "both": mixed_rate}.get(contamination, 0.0)

    @classmethod
    def from_settings(cls, settings: SimulationSettings = None, **overrides) -> ExperimentSpec:
        """A scenario with the simulation settings as defaults, overridden by keyword arguments."""
        settings = simulation_settings if settings is None else settings
        arguments = settings._to_dict()
        arguments.update(overrides)
        return cls(**arguments)

    def derive(self, **changes) -> ExperimentSpec:
        arguments = self._to_dict()
        arguments.update(changes)
        return ExperimentSpec(**arguments)

    def _to_dict(self) -> dict:
        return {"model": self.model, "p": self.p, "n": self.n, "contamination": self.contamination,
                "gamma": self.gamma, "cell_rate": self.cell_rate, "case_rate": self.case_rate,
                "mixed_rate": self.mixed_rate, "na_rate": self.na_rate, "replications": self.replications,
                "seed": self.seed, "estimators": list(self.estimators)}

    @classmethod
    def _from_dict(cls, json_dict):
        return cls(**json_dict)

    def __repr__(self):
        return "ExperimentSpec({})".format(", ".join("{}={!r}".format(k, v) for k, v in self._to_dict().items()))


# ---------------------------------------------- Contamination and NAs ---------------------------------------------


class ContaminationTruth:

    """
    Which cells and cases were altered.

    :ivar cells: n × p boolean array of cells replaced by outlying values
    :ivar rows: n-vector of booleans marking cases redrawn from an outlying distribution
    """

    def __init__(self, cells: np.ndarray, rows: np.ndarray):
        self.cells = cells
        self.rows = rows

    @property
    def altered(self) -> np.ndarray:
        """Every cell that no longer holds its clean value."""
        return self.cells | self.rows[:, None]

    def __repr__(self):
        return "ContaminationTruth(cells={}, rows={})".format(int(self.cells.sum()), int(self.rows.sum()))


def _casewise_shift(Sigma: np.ndarray, gamma: float) -> np.ndarray:
    # along the eigenvector of the smallest eigenvalue, with Mahalanobis length gamma * sqrt(p)
    eigenvectors = np.linalg.eigh(Sigma)[1]
    direction = eigenvectors[:, 0]
    p = len(direction)
    return gamma * np.sqrt(p) * direction / np.sqrt(direction @ np.linalg.solve(Sigma, direction))


def contaminate(X, spec: ExperimentSpec, rng: np.random.Generator,
                Sigma: np.ndarray = None) -> tuple[DataMatrix, ContaminationTruth]:
    """
    Applies the contamination scenario. Cellwise: a uniformly random set of cells is set to γ.
    Casewise: a random set of cases is redrawn from N(γ√p e/√(eᵀΣ⁻¹e), Σ), with e the eigenvector of Σ with the
    smallest eigenvalue. Both: a fraction `mixed_rate` of cases is redrawn, and a fraction `mixed_rate` of all cells,
    chosen among the other cases, is set to γ. Nothing is altered when γ = 0.

    :param X: clean data
    :param spec: the scenario
    :param rng: random generator
    :param Sigma: covariance of the clean data; defaults to the scenario's model
    :return: tuple of (contaminated data, truth masks)
    """
    X = as_data_matrix(X)
    n, p = X.shape
    values = X.values.copy()
    cells = np.zeros((n, p), dtype=bool)
    rows = np.zeros(n, dtype=bool)
    if spec.contamination == "none" or spec.gamma == 0:
        return DataMatrix(values, X.mask, X.columns), ContaminationTruth(cells, rows)

    Sigma = make_sigma(spec.model, p) if Sigma is None else Sigma
    case_rate = {"casewise": spec.case_rate, "both": spec.mixed_rate}.get(spec.contamination, 0.0)
    cell_rate = {"cellwise": spec.cell_rate, "both": spec.mixed_rate}.get(spec.contamination, 0.0)

    case_count = int(round(case_rate * n))
    if case_count > 0:
        rows[rng.choice(n, case_count, replace=False)] = True
        factor = np.linalg.cholesky(Sigma)
        values[rows] = _casewise_shift(Sigma, spec.gamma)[None, :] + rng.standard_normal((case_count, p)) @ factor.T

    cell_count = int(round(cell_rate * n * p))
    if cell_count > 0:
        candidates = np.flatnonzero(np.repeat(~rows, p))
        if cell_count > len(candidates):
            raise ValueError("Cannot place {} outlying cells among {} available cells.".format(
                cell_count, len(candidates)))
        cells.flat[rng.choice(candidates, cell_count, replace=False)] = True
        values[cells] = spec.gamma
    return DataMatrix(values, X.mask, X.columns), ContaminationTruth(cells, rows)


def inject_na(X, na_rate: float, rng: np.random.Generator, protected: np.ndarray = None) -> DataMatrix:
    """
    Marks exactly round(na_rate·n·p) cells as missing, chosen uniformly among the unprotected cells, so that every
    case and every variable keeps at least one observed cell. Draws are repeated until that holds.

    :param X: data
    :param na_rate: fraction of cells to remove
    :param rng: random generator
    :param protected: optional n × p boolean array of cells that must stay observed (e.g. contaminated cells)
    :raises InfeasibleNaRate: if no valid draw is found in 100 attempts
    """
    X = as_data_matrix(X)
    n, p = X.shape
    count = int(round(na_rate * n * p))
    if count == 0:
        return DataMatrix(X.values, X.mask, X.columns)
    available = X.mask if protected is None else X.mask & ~protected
    candidates = np.flatnonzero(available)
    if count > len(candidates):
        raise InfeasibleNaRate("Cannot remove {} cells: only {} are available.".format(count, len(candidates)))
    for _ in range(_NA_ATTEMPTS):
        mask = X.mask.copy()
        mask.flat[rng.choice(candidates, count, replace=False)] = False
        if mask.any(axis=0).all() and mask.any(axis=1).all():
            return DataMatrix(X.values, mask, X.columns)
    raise InfeasibleNaRate("Could not remove {} cells while keeping every case and variable observed in {} "
                           "attempts.".format(count, _NA_ATTEMPTS))


# ---------------------------------------------------- Baselines ---------------------------------------------------


def _pairwise_covariance(X: DataMatrix) -> np.ndarray:
    covariance = X.to_frame().cov(min_periods=2).to_numpy()
    if not np.isfinite(covariance).all():
        raise InsufficientData("Some pair of variables has fewer than 2 jointly observed cases.")
    return covariance


def _spearman_covariance(X: DataMatrix) -> tuple[np.ndarray, ScaleVector]:
    _, scales = robust_standardize(X)
    rank_correlation = X.to_frame().corr(method="spearman", min_periods=3).to_numpy()
    if not np.isfinite(rank_correlation).all():
        raise InsufficientData("Some pair of variables has too few jointly observed cases for a rank correlation.")
    correlation = 2 * np.sin(np.pi * rank_correlation / 6)
    np.fill_diagonal(correlation, 1.0)
    return symmetrize(scales.values[:, None] * correlation * scales.values[None, :]), scales


def _baseline_estimate(X: DataMatrix, covariance: np.ndarray, delta: float, center, D: ScaleVector):
    ridged = ridge_regularize(covariance, delta)
    return CovarianceEstimate(D, None, covariance, ridged, ridged, center, 0, delta, columns=X.columns,
                              mask=X.mask)


def baseline_rcov(X, settings: EstimatorSettings = None) -> CovarianceEstimate:
    """
    RCov: the sample covariance (pairwise complete when cells are missing) followed by ridge regularization, with δ
    chosen by the same cross-validation as cellRCov. The pairwise covariance may be indefinite before the ridge.

    :param X: data
    :param settings: estimator settings (delta or delta_grid, cv_splits, seed); defaults to the global ones
    """
    settings = estimator_settings if settings is None else settings
    X = as_data_matrix(X)
    covariance = _pairwise_covariance(X)
    delta = settings.delta if settings.delta is not None else \
        cross_validate_delta(X, _pairwise_covariance, settings)
    center = np.nanmean(X.values, axis=0)
    return _baseline_estimate(X, covariance, delta, center, ScaleVector(np.ones(X.p), np.nanmedian(X.values, 0)))


def baseline_spearman(X, settings: EstimatorSettings = None) -> CovarianceEstimate:
    """
    Spearman baseline: pairwise Spearman correlations mapped to the Pearson scale by 2·sin(πρ/6), scaled by the
    robust column scales (so the diagonal holds the squared M-scales), then ridge regularized with δ chosen by
    cross-validation.

    :param X: data
    :param settings: estimator settings; defaults to the global ones
    """
    settings = estimator_settings if settings is None else settings
    X = as_data_matrix(X)
    covariance, scales = _spearman_covariance(X)
    delta = settings.delta if settings.delta is not None else \
        cross_validate_delta(X, lambda subset: _spearman_covariance(subset)[0], settings)
    return _baseline_estimate(X, covariance, delta, scales.centers, scales)


def baseline_ridge_cca(X1, X2, k: int, settings: EstimatorSettings = None) -> CcaResult:
    """Plain ridge CCA: canonical pairs of the RCov estimate of the combined data."""
    return cellrcca_fit(X1, X2, k, settings, method="rcov")


#: estimator names and the functions computing them
estimator_functions = {
    "cellRCov": estimate,
    "RCov": baseline_rcov,
    "Spearman": baseline_spearman,
}


# ------------------------------------------------- Block generators -----------------------------------------------


def planted_link_blocks(n: int, p: int, q: int, rng: np.random.Generator,
                        snr: float = 10.0) -> tuple[DataMatrix, DataMatrix]:
    """
    Two linearly linked blocks: X₁ standard Gaussian and X₂ = X₁W + noise, with W Gaussian with variance 1/p and
    noise variance set so that the signal-to-noise ratio of every X₂ variable is `snr`.
    """
    X1 = rng.standard_normal((n, p))
    link = rng.standard_normal((p, q)) / np.sqrt(p)
    signal = X1 @ link
    noise_scale = np.sqrt(np.sum(link ** 2, axis=0) / snr)
    X2 = signal + rng.standard_normal((n, q)) * noise_scale[None, :]
    return (DataMatrix(X1, columns=[f"X{j + 1}" for j in range(p)]),
            DataMatrix(X2, columns=[f"Y{j + 1}" for j in range(q)]))


def contaminate_blocks(X1, X2, gamma: float, rng: np.random.Generator, cell_rate: float = 0.1,
                       case_rate: float = 0.1) -> tuple[DataMatrix, DataMatrix, ContaminationTruth]:
    """
    Contaminates the combined blocks relative to their own robust location and scale: a fraction `case_rate` of
    cases is redrawn from N(m̂ + γŝ, diag(ŝ²)), and a fraction `cell_rate` of all cells, among the other cases, is
    replaced by m̂ⱼ + γŝⱼ, where m̂ⱼ and ŝⱼ are the median and M-scale of variable j.
    """
    X1, X2 = as_data_matrix(X1), as_data_matrix(X2)
    joint = X1.hstack(X2)
    n, total = joint.shape
    medians = np.nanmedian(joint.values, axis=0)
    scales = m_scale_columns(joint.values - medians[None, :], mask=joint.mask)
    values = joint.values.copy()

    rows = np.zeros(n, dtype=bool)
    rows[rng.choice(n, int(round(case_rate * n)), replace=False)] = True
    values[rows] = (medians + gamma * scales)[None, :] + rng.standard_normal((int(rows.sum()), total)) * scales
    cells = np.zeros((n, total), dtype=bool)
    candidates = np.flatnonzero(np.repeat(~rows, total))
    cells.flat[rng.choice(candidates, int(round(cell_rate * n * total)), replace=False)] = True
    values = np.where(cells, (medians + gamma * scales)[None, :], values)
    values[~joint.mask] = np.nan

    p = X1.p
    return (DataMatrix(values[:, :p], joint.mask[:, :p], X1.columns),
            DataMatrix(values[:, p:], joint.mask[:, p:], X2.columns), ContaminationTruth(cells, rows))


# -------------------------------------------------- Experiments --------------------------------------------------


class ExperimentResult(SavesToJSON):

    """
    Outcome of a Monte Carlo experiment.

    :param spec: the scenario
    :param kl_values: estimator name → list of KL discrepancies per replication (NaN for failures)
    :param wall_time: seconds spent (None when not timed)
    """

    def __init__(self, spec: ExperimentSpec, kl_values: dict, wall_time: float = None):
        self.spec = spec
        self.kl_values = {name: np.asarray(values, dtype=float) for name, values in kl_values.items()}
        self.wall_time = wall_time

    def mean_kl(self, name: str) -> float:
        """Mean KL over successful replications (NaN if none succeeded)."""
        values = self.kl_values[name]
        values = values[np.isfinite(values)]
        return float(np.mean(values)) if len(values) > 0 else float("nan")

    def standard_error(self, name: str) -> float:
        values = self.kl_values[name]
        values = values[np.isfinite(values)]
        return float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0

    def failures(self, name: str) -> int:
        return int(np.sum(~np.isfinite(self.kl_values[name])))

    def summary(self) -> dict:
        return {name: {"mean_kl": self.mean_kl(name), "se": self.standard_error(name),
                       "failures": self.failures(name)} for name in self.kl_values}

    def _to_dict(self) -> dict:
        return {"spec": self.spec._to_dict(),
                "kl_values": {name: as_float_list(values) for name, values in self.kl_values.items()},
                "summary": self.summary(), "wall_time": self.wall_time}

    @classmethod
    def _from_dict(cls, json_dict):
        return cls(ExperimentSpec._from_dict(json_dict["spec"]), json_dict["kl_values"],
                   json_dict.get("wall_time"))

    def __repr__(self):
        return "ExperimentResult({})".format(", ".join("{}: {:.4g}".format(name, self.mean_kl(name))
                                                     for name in self.kl_values))


def _replicate(spec: ExperimentSpec, Sigma: np.ndarray, seed_sequence, settings: EstimatorSettings) -> dict:
    rng = make_generator(seed_sequence)
    clean = rng.standard_normal((spec.n, spec.p)) @ np.linalg.cholesky(Sigma).T
    X, truth = contaminate(clean, spec, rng, Sigma)
    X = inject_na(X, spec.na_rate, rng, truth.altered)
    kl_values = {}
    for name in spec.estimators:
        try:
            kl_values[name] = kl_discrepancy(estimator_functions[name](X, settings).Sigma_hat, Sigma)
        except (CellRCovError, ValueError, ArithmeticError, np.linalg.LinAlgError) as error:
            logging.warning("{} failed on a replication: {}".format(name, error))
            kl_values[name] = float("nan")
    return kl_values


def run_experiment(spec: ExperimentSpec, settings: EstimatorSettings = None) -> ExperimentResult:
    """
    Runs every replication of a scenario: Gaussian data from the covariance model, contamination, missing cells,
    then every estimator scored by its KL discrepancy from the true covariance. Replications use independent
    streams spawned from the scenario's seed, so results do not depend on the number of workers.

    :param spec: the scenario
    :param settings: estimator settings (n_jobs sets the number of workers); defaults to the global ones
    """
    settings = estimator_settings if settings is None else settings
    start = time.perf_counter()
    Sigma = make_sigma(spec.model, spec.p)
    seed_sequences = np.random.SeedSequence(spec.seed).spawn(spec.replications)
    # replications run in parallel, so the estimators inside each run serially
    inner_settings = settings.derive(n_jobs=1)
    outcomes = Parallel(n_jobs=resolve_n_jobs(settings.n_jobs))(
        delayed(_replicate)(spec, Sigma, seed_sequence, inner_settings) for seed_sequence in seed_sequences
    )
    kl_values = {name: [outcome[name] for outcome in outcomes] for name in spec.estimators}
    result = ExperimentResult(spec, kl_values, time.perf_counter() - start)
    logging.info("Scenario {} {} gamma={} p={}: {} in {:.1f}s".format(
        spec.model, spec.contamination, spec.gamma, spec.p, result, result.wall_time))
    return result


def scenario_grid(grid_string: str, base: ExperimentSpec = None) -> list[ExperimentSpec]:
    """
    Expands a grid expression (see :func:`~cellrcov._parsing.parse_grid`) into the list of scenarios, varying the
    first key slowest.

    :param grid_string: e.g. "gamma=0:10:2; p=30,60"
    :param base: scenario supplying every value not named in the grid; defaults to the simulation settings
    """
    base = ExperimentSpec.from_settings() if base is None else base
    grid = parse_grid(grid_string)
    integer_keys = ("p", "n", "replications")
    specs = []
    for combination in itertools.product(*grid.values()):
        changes = {key: int(value) if key in integer_keys else value for key, value in zip(grid, combination)}
        specs.append(base.derive(**changes))
    return specs


def run_grid(specs: Sequence[ExperimentSpec], settings: EstimatorSettings = None) -> list[ExperimentResult]:
    """Runs a list of scenarios in order."""
    return [run_experiment(spec, settings) for spec in specs]


def results_frame(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    """
    One row per scenario and estimator, with columns model, p, n, scenario, gamma, estimator, mean_kl, se and
    failures.
    """
    rows = [
        {"model": result.spec.model, "p": result.spec.p, "n": result.spec.n, "scenario": result.spec.contamination,
         "gamma": result.spec.gamma, "estimator": name, "mean_kl": result.mean_kl(name),
         "se": result.standard_error(name), "failures": result.failures(name)}
        for result in results for name in result.spec.estimators
    ]
    return pd.DataFrame(rows, columns=["model", "p", "n", "scenario", "gamma", "estimator", "mean_kl", "se",
                                       "failures"])
