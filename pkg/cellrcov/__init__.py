"""
cellrcov: cellwise robust regularized covariance. Covariance estimation resistant to cellwise outliers, casewise
outliers and missing cells, with Mahalanobis anomaly detection, robust canonical correlation analysis, and a Monte
Carlo laboratory for benchmarking against classical and rank-based estimators.
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

from .data import DataMatrix, as_data_matrix
from .errors import CellRCovError, DegenerateScale, DegenerateColumn, EmptyRow, RankDeficient, NoConvergence, \
    SingularScatter, TooFewCases, DegenerateNormalizer, InvalidDelta, NotPositiveDefinite, SingleClass, \
    ConstantInput, BlockNotPD, DimensionMismatch, SingleCaseFold, InfeasibleNaRate, InsufficientData, \
    ScenarioSyntaxError
from .kernels import RhoParams, ScaleVector, rho_tanh, psi_tanh, rho, psi, weight, m_scale, m_scale_columns, \
    robust_standardize
from .cellpca import SubspaceFit, fit_subspace, loss, total_deviation, cell_weights, case_weights, impute, \
    solve_scores
from .mcd import McdResult, mcd_estimate, c_step, consistency_factor, mahalanobis_sq
from .covariance import CovarianceEstimate, RankSelection, estimate, select_rank, select_delta, \
    cross_validate_delta, choose_delta, ridge_regularize, sigma_sub, sigma_perp
from .metrics import RocCurve, kl_discrepancy, mahalanobis, detection_threshold, anomaly_flags, roc_auc, \
    spearman_corr, mcc
from .cca import CcaResult, cca_from_covariance, cellrcca_fit, cellrcca_transform, cellrcca_cv
from .simlab import ExperimentSpec, ExperimentResult, ContaminationTruth, make_sigma, contaminate, inject_na, \
    baseline_rcov, baseline_spearman, baseline_ridge_cca, planted_link_blocks, contaminate_blocks, \
    run_experiment, run_grid, scenario_grid, results_frame
from .settings import estimator_settings, simulation_settings, EstimatorSettings, SimulationSettings, \
    restore_all_factory_defaults
import importlib.metadata

try:
    __version__ = importlib.metadata.version('cellrcov')
    __author__ = importlib.metadata.metadata('cellrcov')['Author']
except importlib.metadata.PackageNotFoundError:
    __version__ = "unknown"
    __author__ = "The cellrcov developers"
