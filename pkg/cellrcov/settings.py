"""
Module containing the settings classes: :class:`EstimatorSettings`, which configures the cellRCov pipeline (robust
kernels, cellPCA iterations, MCD coverage, rank and ridge selection, seed), and :class:`SimulationSettings`, which
holds the defaults of the Monte Carlo laboratory. A module-level instance of each (:code:`estimator_settings` and
:code:`simulation_settings`) is loaded from JSON files within the cellrcov data directory and serves as the default
configuration for every operation that accepts a `settings` argument.
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
from types import SimpleNamespace
from copy import deepcopy
from .utilities import resolve_path, SavesToJSON
import logging
import json


class _CellRCovSettings(SimpleNamespace, SavesToJSON):

    """Base class for cellrcov settings classes."""

    factory_defaults = {}
    _settings_name = "Settings"
    _json_path = None

    def __init__(self, settings_dict: dict = None, suppress_warnings: bool = False, persist_repairs: bool = True):
        rewrite_file = False
        if settings_dict is None:
            settings_arguments = deepcopy(self.factory_defaults)
        else:
            settings_arguments = {}
            for key in set(settings_dict.keys()).union(set(self.factory_defaults.keys())):
                if key in settings_dict and key in self.factory_defaults:
                    settings_arguments[key] = settings_dict[key]
                elif key in settings_dict:
                    # someone added something to the json file that shouldn't be there
                    if not suppress_warnings:
                        logging.warning("Removing unexpected key \"{}\" in {}.".format(key, self._file_name()))
                    rewrite_file = True
                    continue
                else:
                    settings_arguments[key] = deepcopy(self.factory_defaults[key])
                    if not suppress_warnings:
                        logging.warning("Key \"{}\" was not found in {}, and will be added.".format(
                            key, self._file_name()
                        ))
                    rewrite_file = True
                settings_arguments[key] = self._validate_attribute(key, settings_arguments[key])
        super().__init__(**settings_arguments)
        if rewrite_file and persist_repairs and self._json_path is not None:
            self.make_persistent()

    @classmethod
    def _file_name(cls):
        return cls._json_path.split("/")[-1] if cls._json_path is not None else "settings"

    def restore_factory_defaults(self, persist=False) -> None:
        """
        Restores settings back to their factory defaults. Unless the `persist` argument is set, this is temporary to
        the running of the current script.

        :param persist: if True, rewrites the JSON file from which defaults are loaded
        """
        for key in self.factory_defaults:
            vars(self)[key] = deepcopy(self.factory_defaults[key])
        if persist:
            self.make_persistent()

    def make_persistent(self) -> None:
        """
        Rewrites the JSON file from which settings are loaded, so that the current values become the defaults of
        future sessions.
        """
        self.save_to_json(resolve_path(self._json_path))

    @classmethod
    def factory_default(cls):
        """
        Returns a factory default version of this settings object.
        """
        return cls({}, suppress_warnings=True, persist_repairs=False)

    def derive(self, **changes):
        """
        Returns a copy of these settings with the given attributes changed. The copy is never written to disk.

        :param changes: attribute names and new values. Unknown names raise an AttributeError.
        """
        for key in changes:
            if key not in self.factory_defaults:
                raise AttributeError("{} has no setting \"{}\".".format(self._settings_name, key))
        values = deepcopy(self._to_dict())
        values.update(changes)
        return type(self)(values, suppress_warnings=True, persist_repairs=False)

    def _to_dict(self):
        return {k: v for k, v in vars(self).items()}

    @classmethod
    def _from_dict(cls, json_object):
        return cls(json_object)

    @classmethod
    def load(cls):
        """
        Loads an instance of this settings object from its corresponding JSON file. If no such file exists, or it is
        corrupted in some way, then this creates a fresh JSON file there.
        """
        try:
            return cls.load_from_json(resolve_path(cls._json_path))
        except FileNotFoundError:
            logging.warning("{} not found; generating defaults. "
                            "(This is normal on first import.)".format(cls._settings_name))
            factory_defaults = cls.factory_default()
            try:
                factory_defaults.make_persistent()
            except OSError:
                logging.warning("Could not write {}; defaults will not persist.".format(cls._file_name()))
            return factory_defaults
        except (TypeError, ValueError, KeyError, json.decoder.JSONDecodeError):
            logging.warning(f"Error loading {cls._settings_name.lower()}; falling back to defaults. (This could be "
                            f"due to a change in cellrcov version.)")
            return cls.factory_default()

    @staticmethod
    def _validate_attribute(key, value):
        return value

    def __setattr__(self, key, value):
        if all(x is None for x in vars(self).values()):
            # avoids validation warnings when subclasses set their attributes to None at the start of __init__
            super().__setattr__(key, value)
        else:
            super().__setattr__(key, self._validate_attribute(key, value))


_default_tanh = {"b": 1.5, "c": 4.0, "q1": 1.540793, "q2": 0.8622731}


class EstimatorSettings(_CellRCovSettings):

    """
    Namespace containing the settings of the cellRCov estimator and of everything built on it.

    :param settings_dict: dictionary from which to set all settings attributes
    :ivar rank: rank k of the principal subspace, or None to select it by parallel analysis
    :ivar delta: ridge parameter in (0, 1], or None to select it by cross-validation
    :ivar alpha: coverage of the MCD applied to the scores, in [0.5, 1)
    :ivar rho_family: "tanh" for the bounded robust loss, or "quadratic" for the classical least squares loss
    :ivar cell_rho: constants b, c, q1, q2 of the tanh ρ applied to cellwise residuals
    :ivar case_rho: constants b, c, q1, q2 of the tanh ρ applied to casewise total deviations
    :ivar score_scatter: "mcd" for the MCD scatter of the scores, "sample" for their plain covariance
    :ivar tolerance: relative decrease of the cellPCA objective below which iterations stop
    :ivar max_iterations: cap on the outer cellPCA iterations
    :ivar inner_tolerance: convergence tolerance of the per-case score solves
    :ivar max_inner_iterations: cap on the iterations of the per-case score solves
    :ivar raise_on_no_convergence: if True, reaching max_iterations raises NoConvergence instead of logging a warning
    :ivar delta_grid: candidate values of the ridge parameter
    :ivar cv_splits: number of random splits used to select delta
    :ivar pa_references: number of simulated Gaussian datasets in parallel analysis
    :ivar pa_percentile: percentile of the reference gaps that an observed gap must exceed
    :ivar pa_max_rank: largest rank considered by parallel analysis
    :ivar seed: seed driving parallel analysis references and cross-validation splits
    :ivar n_jobs: number of parallel workers; None defers to the RCOV_THREADS environment variable
    """

    #: Default estimator settings
    factory_defaults = {
        "rank": None,
        "delta": None,
        "alpha": 0.75,
        "rho_family": "tanh",
        "cell_rho": dict(_default_tanh),
        "case_rho": dict(_default_tanh),
        "score_scatter": "mcd",
        "tolerance": 1e-9,
        "max_iterations": 100,
        "inner_tolerance": 1e-10,
        "max_inner_iterations": 50,
        "raise_on_no_convergence": False,
        "delta_grid": [round(0.05 * i, 2) for i in range(1, 21)],
        "cv_splits": 5,
        "pa_references": 50,
        "pa_percentile": 95.0,
        "pa_max_rank": 25,
        "seed": 20160415,
        "n_jobs": None,
    }

    _settings_name = "Estimator settings"
    _json_path = "%DATA/estimatorSettings.json"

    def __init__(self, settings_dict: dict = None, suppress_warnings: bool = False, persist_repairs: bool = True):
        # This is here to help with auto-completion so that the IDE knows what attributes are available
        self.rank = self.delta = self.alpha = self.rho_family = self.cell_rho = self.case_rho = \
            self.score_scatter = self.tolerance = self.max_iterations = self.inner_tolerance = \
            self.max_inner_iterations = self.raise_on_no_convergence = self.delta_grid = self.cv_splits = \
            self.pa_references = self.pa_percentile = self.pa_max_rank = self.seed = self.n_jobs = None
        super().__init__(settings_dict, suppress_warnings, persist_repairs)

    def cell_rho_params(self):
        """The :class:`~cellrcov.kernels.RhoParams` applied to cellwise residuals."""
        from .kernels import RhoParams
        return RhoParams.quadratic() if self.rho_family == "quadratic" else RhoParams(**self.cell_rho)

    def case_rho_params(self):
        """The :class:`~cellrcov.kernels.RhoParams` applied to casewise total deviations."""
        from .kernels import RhoParams
        return RhoParams.quadratic() if self.rho_family == "quadratic" else RhoParams(**self.case_rho)

    @staticmethod
    def _validate_attribute(key, value):
        defaults = EstimatorSettings.factory_defaults
        if key == "alpha" and not (isinstance(value, (int, float)) and 0.5 <= value < 1):
            logging.warning("Invalid value \"{}\" for alpha: must be in [0.5, 1). Defaulting to {}.".format(
                value, defaults["alpha"]))
            return defaults["alpha"]
        elif key == "delta" and value is not None and not (isinstance(value, (int, float)) and 0 < value <= 1):
            logging.warning("Invalid value \"{}\" for delta: must be in (0, 1] or None. Defaulting to automatic "
                            "selection.".format(value))
            return None
        elif key == "rank" and value is not None and not (isinstance(value, int) and value >= 1):
            logging.warning("Invalid value \"{}\" for rank: must be a positive integer or None. Defaulting to "
                            "automatic selection.".format(value))
            return None
        elif key == "rho_family" and value not in ("tanh", "quadratic"):
            logging.warning("Invalid rho family \"{}\": must be \"tanh\" or \"quadratic\". Defaulting to \"{}\"."
                            .format(value, defaults["rho_family"]))
            return defaults["rho_family"]
        elif key == "score_scatter" and value not in ("mcd", "sample"):
            logging.warning("Invalid score scatter \"{}\": must be \"mcd\" or \"sample\". Defaulting to \"{}\"."
                            .format(value, defaults["score_scatter"]))
            return defaults["score_scatter"]
        elif key in ("cell_rho", "case_rho") and not (isinstance(value, dict) and set(value) == set(_default_tanh)
                                                     and 0 < value["b"] < value["c"]):
            logging.warning("Invalid {} \"{}\": must give b, c, q1 and q2 with 0 < b < c. Falling back to "
                            "defaults.".format(key, value))
            return dict(_default_tanh)
        elif key == "delta_grid" and not (isinstance(value, (list, tuple)) and len(value) > 0
                                          and all(isinstance(x, (int, float)) and 0 < x <= 1 for x in value)):
            logging.warning("Invalid delta grid \"{}\": must be a nonempty list of values in (0, 1]. Falling back "
                            "to defaults.".format(value))
            return list(defaults["delta_grid"])
        return value


class SimulationSettings(_CellRCovSettings):

    """
    Namespace containing the defaults of the Monte Carlo laboratory (see :mod:`~cellrcov.simlab`).

    :param settings_dict: dictionary from which to set all settings attributes
    :ivar n: number of cases per simulated dataset
    :ivar p: dimension
    :ivar model: covariance model, one of "A09", "A06", "planar" and "dense"
    :ivar contamination: one of "none", "cellwise", "casewise" and "both"
    :ivar gamma: contamination severity
    :ivar cell_rate: fraction of contaminated cells in the cellwise scenario
    :ivar case_rate: fraction of contaminated cases in the casewise scenario
    :ivar mixed_rate: fraction of contaminated cells, and of contaminated cases, in the "both" scenario
    :ivar na_rate: fraction of missing cells
    :ivar replications: number of simulated datasets per scenario
    :ivar estimators: names of the estimators compared
    :ivar seed: seed of the experiment
    """

    #: Default simulation settings
    factory_defaults = {
        "n": 100,
        "p": 30,
        "model": "A09",
        "contamination": "cellwise",
        "gamma": 6.0,
        "cell_rate": 0.2,
        "case_rate": 0.2,
        "mixed_rate": 0.1,
        "na_rate": 0.0,
        "replications": 200,
        "estimators": ["cellRCov", "RCov", "Spearman"],
        "seed": 20160415,
    }

    _settings_name = "Simulation settings"
    _json_path = "%DATA/simulationSettings.json"

    def __init__(self, settings_dict: dict = None, suppress_warnings: bool = False, persist_repairs: bool = True):
        # This is here to help with auto-completion so that the IDE knows what attributes are available
        self.n = self.p = self.model = self.contamination = self.gamma = self.cell_rate = self.case_rate = \
            self.mixed_rate = self.na_rate = self.replications = self.estimators = self.seed = None
        super().__init__(settings_dict, suppress_warnings, persist_repairs)

    @staticmethod
    def _validate_attribute(key, value):
        defaults = SimulationSettings.factory_defaults
        if key == "model" and value not in ("A09", "A06", "planar", "dense"):
            logging.warning("Unknown covariance model \"{}\". Defaulting to \"{}\".".format(value, defaults["model"]))
            return defaults["model"]
        elif key == "contamination" and value not in ("none", "cellwise", "casewise", "both"):
            logging.warning("Unknown contamination scenario \"{}\". Defaulting to \"{}\".".format(
                value, defaults["contamination"]))
            return defaults["contamination"]
        elif key in ("cell_rate", "case_rate", "mixed_rate", "na_rate") and \
                not (isinstance(value, (int, float)) and 0 <= value <= 1):
            logging.warning("Invalid value \"{}\" for {}: must be in [0, 1]. Defaulting to {}.".format(
                value, key, defaults[key]))
            return defaults[key]
        elif key == "estimators" and not (isinstance(value, list) and
                                          all(x in ("cellRCov", "RCov", "Spearman") for x in value)):
            logging.warning("Estimators must be a list drawn from \"cellRCov\", \"RCov\" and \"Spearman\". Falling "
                            "back to defaults.")
            return list(defaults["estimators"])
        return value


#: Instance of :class:`~cellrcov.settings.EstimatorSettings` containing the actual estimator defaults to be consulted
estimator_settings: EstimatorSettings = EstimatorSettings.load()
#: Instance of :class:`~cellrcov.settings.SimulationSettings` containing the actual simulation defaults
simulation_settings: SimulationSettings = SimulationSettings.load()


def restore_all_factory_defaults(persist: bool = False) -> None:
    """
    Restores all settings back to their factory defaults. Unless the `persist` argument is set, this is temporary to
    the running of the current script.

    :param persist: if True, rewrites the JSON files from which defaults are loaded
    """
    estimator_settings.restore_factory_defaults(persist)
    simulation_settings.restore_factory_defaults(persist)
