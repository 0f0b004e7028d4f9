"""
Command-line interface: ``cellrcov estimate``, ``detect``, ``cca``, ``simulate`` and ``rank``. Every command reads
comma-separated files with a header row, writes its result atomically, and exits with status 0 on success, 1 on
input/output errors and 2 on invalid data or estimator failures.
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
import argparse
import json
import logging
import os
import sys
from typing import Sequence
import numpy as np
import pandas as pd
from .cca import cellrcca_cv, cellrcca_fit, cellrcca_transform
from .covariance import estimate, select_rank
from .data import DataMatrix
from .errors import CellRCovError, DimensionMismatch
from .kernels import robust_standardize
from .metrics import anomaly_flags, detection_threshold, mahalanobis, roc_auc
from .settings import EstimatorSettings, estimator_settings, simulation_settings
from .simlab import ExperimentSpec, models, results_frame, run_grid, scenario_grid, scenarios
from .utilities import as_float_list, write_atomically

_FLOAT_FORMAT = "%.17g"


# --------------------------------------------------- Output helpers -----------------------------------------------


def _write_json(path: str, json_dict: dict) -> None:
    def write(temp_path):
        with open(temp_path, "w") as file:
            json.dump(json_dict, file, indent=2)
    write_atomically(path, write)


def _write_csv(path: str, frame: pd.DataFrame, index: bool = False) -> None:
    write_atomically(path, lambda temp_path: frame.to_csv(temp_path, index=index, float_format=_FLOAT_FORMAT))


def _sidecar_path(path: str, suffix: str) -> str:
    stem, extension = os.path.splitext(path)
    return stem + suffix + (extension or ".csv")


def _estimator_settings(args) -> EstimatorSettings:
    changes = {"seed": args.seed}
    if args.threads is not None:
        changes["n_jobs"] = args.threads
    for name in ("rank", "delta", "alpha", "rho_family", "score_scatter"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    return estimator_settings.derive(**changes)


def _read(path: str, args, drop_columns: Sequence[str] = ()) -> DataMatrix:
    return DataMatrix.from_csv(path, na_token=args.na_token, drop_columns=drop_columns)


# ----------------------------------------------------- Commands ---------------------------------------------------


def cmd_estimate(args) -> None:
    """Fits cellRCov to a CSV and writes Σ̂ with its center, scales, rank, δ, weights and flagged cells."""
    X = _read(args.input, args)
    result = estimate(X, _estimator_settings(args))
    logging.info("Estimated rank {} and delta {} from {} cases.".format(result.rank_k, result.ridge_delta, X.n))
    if args.format == "csv":
        _write_csv(args.output, pd.DataFrame(result.Sigma_hat, index=result.columns, columns=result.columns),
                   index=True)
        if args.imputed:
            _write_csv(_sidecar_path(args.output, "_imputed"), pd.DataFrame(result.imputed, columns=result.columns))
    else:
        result.export_imputed = args.imputed
        _write_json(args.output, result._to_dict())


def _detection_columns(train: DataMatrix, score: DataMatrix) -> None:
    if score.columns != train.columns:
        raise DimensionMismatch("Scoring columns {} do not match training columns {}.".format(
            score.columns, train.columns))


def cmd_detect(args) -> None:
    """
    Fits cellRCov to the training file and flags the cases of the scoring file whose Mahalanobis distance exceeds
    the square root of the chosen χ² quantile. Missing scoring cells are filled with the fitted center. With
    ``--labels``, the ROC curve and its AUC are reported too.
    """
    labels = None
    drop = [args.labels] if args.labels is not None else []
    train_frame = pd.read_csv(args.train, na_values=[args.na_token, ""], keep_default_na=False)
    train = DataMatrix.from_frame(train_frame.drop(columns=[c for c in drop if c in train_frame.columns]))
    score_frame = pd.read_csv(args.score, na_values=[args.na_token, ""], keep_default_na=False)
    if args.labels is not None:
        if args.labels not in score_frame.columns:
            raise ValueError("Label column \"{}\" not found in {}.".format(args.labels, args.score))
        labels = score_frame[args.labels].to_numpy()
        score_frame = score_frame.drop(columns=[args.labels])
    score = DataMatrix.from_frame(score_frame)
    _detection_columns(train, score)

    fit = estimate(train, _estimator_settings(args))
    if not score.complete:
        logging.warning("Filling {} missing scoring cells with the fitted center.".format(int((~score.mask).sum())))
    distances = mahalanobis(np.where(score.mask, score.values, fit.center[None, :]), fit.center, fit.Sigma_hat)
    threshold = detection_threshold(score.p, args.threshold)
    flags = anomaly_flags(distances, threshold)
    logging.info("Flagged {} of {} cases at threshold {:.4g}.".format(int(flags.sum()), score.n, threshold))
    roc = roc_auc(distances, labels) if labels is not None else None

    if args.format == "csv":
        _write_csv(args.output, pd.DataFrame({"distance": distances, "anomalous": flags.astype(int)}))
        if roc is not None:
            _write_csv(_sidecar_path(args.output, "_roc"), pd.DataFrame(
                {"threshold": roc.thresholds, "tpr": roc.tpr, "fpr": roc.fpr, "auc": roc.auc}))
    else:
        json_dict = {"threshold": threshold, "quantile": args.threshold, "distances": as_float_list(distances),
                     "anomalous": [bool(flag) for flag in flags]}
        if roc is not None:
            json_dict.update({"auc": roc.auc, "roc": {"thresholds": as_float_list(roc.thresholds),
                                                      "tpr": as_float_list(roc.tpr), "fpr": as_float_list(roc.fpr)}})
        _write_json(args.output, json_dict)


def cmd_cca(args) -> None:
    """Canonical directions, correlations and variables of two blocks, with the cross-validated MCC on request."""
    X1, X2 = _read(args.first, args), _read(args.second, args)
    if X1.n != X2.n:
        raise DimensionMismatch("The blocks have {} and {} cases.".format(X1.n, X2.n))
    settings = _estimator_settings(args)
    result = cellrcca_fit(X1, X2, args.k, settings, method=args.method)
    U, V = cellrcca_transform(result, X1, X2)
    json_dict = result._to_dict()
    json_dict.update({"first_columns": X1.columns, "second_columns": X2.columns,
                      "first_variables": as_float_list(U), "second_variables": as_float_list(V)})
    if args.cv:
        json_dict["cv_mcc"] = cellrcca_cv(X1, X2, args.k, args.folds, settings, method=args.method)
        logging.info("Cross-validated MCC: {:.4f}".format(json_dict["cv_mcc"]))
    _write_json(args.output, json_dict)


def cmd_simulate(args) -> None:
    """Runs a grid of Monte Carlo scenarios and writes the mean KL table."""
    changes = {"seed": args.seed}
    for name in ("model", "p", "n", "contamination", "gamma", "na_rate", "replications"):
        if getattr(args, name) is not None:
            changes[name] = getattr(args, name)
    if args.estimators is not None:
        changes["estimators"] = args.estimators.split(",")
    base = ExperimentSpec.from_settings(simulation_settings, **changes)
    specs = scenario_grid(args.grid, base) if args.grid is not None else [base]
    results = run_grid(specs, _estimator_settings(args))
    if args.format == "json":
        _write_json(args.output, {"results": [result._to_dict() for result in results]})
    else:
        _write_csv(args.output, results_frame(results))


def cmd_rank(args) -> None:
    """Parallel analysis on the robustly standardized data."""
    X = _read(args.input, args)
    settings = _estimator_settings(args)
    Z, _ = robust_standardize(X, settings.cell_rho_params())
    selection = select_rank(Z, settings)
    logging.info("Parallel analysis chose rank {}.".format(selection.chosen_k))
    _write_json(args.output, selection._to_dict())


# ------------------------------------------------------ Parser ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellrcov", description="Cellwise robust regularized covariance.")
    parser.add_argument("--seed", type=int, default=estimator_settings.seed, help="seed of every random stream")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    parser.add_argument("-q", "--quiet", action="store_true", help="log errors only")
    parser.add_argument("--threads", type=int, default=None, help="parallel workers (default: RCOV_THREADS or 1)")
    parser.add_argument("--na-token", default="NA", help="string marking a missing cell")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def estimator_options(subparser, rank_flag="--k"):
        subparser.add_argument(rank_flag, dest="rank", type=int, default=None,
                               help="rank (default: parallel analysis)")
        subparser.add_argument("--delta", type=float, default=None, help="ridge parameter (default: CV)")
        subparser.add_argument("--alpha", type=float, default=None, help="MCD coverage in [0.5, 1)")
        subparser.add_argument("--rho-family", choices=("tanh", "quadratic"), default=None)
        subparser.add_argument("--score-scatter", choices=("mcd", "sample"), default=None)

    estimate_parser = subparsers.add_parser("estimate", help="fit cellRCov to a CSV file")
    estimate_parser.add_argument("input")
    estimate_parser.add_argument("-o", "--output", required=True)
    estimate_parser.add_argument("--imputed", action="store_true", help="also write the imputed data")
    estimate_parser.add_argument("--format", choices=("json", "csv"), default="json")
    estimator_options(estimate_parser)
    estimate_parser.set_defaults(function=cmd_estimate)

    detect_parser = subparsers.add_parser("detect", help="flag anomalous cases by Mahalanobis distance")
    detect_parser.add_argument("train")
    detect_parser.add_argument("score")
    detect_parser.add_argument("-o", "--output", required=True)
    detect_parser.add_argument("--labels", metavar="COLUMN", default=None, help="0/1 label column for ROC/AUC")
    detect_parser.add_argument("--threshold", type=float, default=0.99, help="χ² quantile of the cutoff")
    detect_parser.add_argument("--format", choices=("json", "csv"), default="json")
    estimator_options(detect_parser)
    detect_parser.set_defaults(function=cmd_detect)

    cca_parser = subparsers.add_parser("cca", help="robust canonical correlation analysis of two CSV files")
    cca_parser.add_argument("first")
    cca_parser.add_argument("second")
    cca_parser.add_argument("-o", "--output", required=True)
    cca_parser.add_argument("--k", dest="k", type=int, required=True, help="number of canonical pairs")
    cca_parser.add_argument("--cv", action="store_true", help="report the cross-validated MCC")
    cca_parser.add_argument("--folds", type=int, default=10)
    cca_parser.add_argument("--method", choices=("cellrcov", "rcov"), default="cellrcov")
    estimator_options(cca_parser, rank_flag="--rank")
    cca_parser.set_defaults(function=cmd_cca)

    simulate_parser = subparsers.add_parser("simulate", help="run Monte Carlo scenarios")
    simulate_parser.add_argument("-o", "--output", required=True)
    simulate_parser.add_argument("--grid", default=None, help="e.g. \"gamma=0:10:2; p=30,60\"")
    simulate_parser.add_argument("--model", choices=models, default=None)
    simulate_parser.add_argument("--p", type=int, default=None)
    simulate_parser.add_argument("--n", type=int, default=None)
    simulate_parser.add_argument("--contamination", choices=scenarios, default=None)
    simulate_parser.add_argument("--gamma", type=float, default=None)
    simulate_parser.add_argument("--na-rate", type=float, default=None)
    simulate_parser.add_argument("--replications", type=int, default=None)
    simulate_parser.add_argument("--estimators", default=None, help="comma-separated, e.g. cellRCov,RCov")
    simulate_parser.add_argument("--format", choices=("json", "csv"), default="csv")
    estimator_options(simulate_parser)
    simulate_parser.set_defaults(function=cmd_simulate)

    rank_parser = subparsers.add_parser("rank", help="select the rank by parallel analysis")
    rank_parser.add_argument("input")
    rank_parser.add_argument("-o", "--output", required=True)
    estimator_options(rank_parser)
    rank_parser.set_defaults(function=cmd_rank)
    return parser


def main(argv: Sequence[str] = None) -> int:
    """
    Entry point of the ``cellrcov`` command.

    :param argv: command-line arguments (defaults to ``sys.argv[1:]``)
    :return: exit status: 0 on success, 1 on input/output errors, 2 on invalid data or estimator failures
    """
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        args.function(args)
    except OSError as error:
        logging.error(str(error))
        print("error: {}".format(error), file=sys.stderr)
        return 1
    except (CellRCovError, ValueError) as error:
        print("error: {}".format(error), file=sys.stderr)
        return 2
    return 0
