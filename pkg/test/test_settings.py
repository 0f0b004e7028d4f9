import pytest
from cellrcov import EstimatorSettings, SimulationSettings, RhoParams


def test_factory_defaults():
    settings = EstimatorSettings.factory_default()
    assert settings.alpha == 0.75
    assert settings.rank is None and settings.delta is None
    assert settings.cell_rho_params() == RhoParams()
    simulation = SimulationSettings.factory_default()
    assert (simulation.n, simulation.p, simulation.model) == (100, 30, "A09")
    assert simulation.replications == 200


def test_derive_leaves_original_untouched():
    settings = EstimatorSettings.factory_default()
    derived = settings.derive(rank=2, delta=0.3)
    assert (derived.rank, derived.delta) == (2, 0.3)
    assert settings.rank is None
    with pytest.raises(AttributeError):
        settings.derive(bogus=1)


def test_invalid_values_fall_back(caplog):
    settings = EstimatorSettings.factory_default()
    derived = settings.derive(alpha=1.5, rho_family="huber", delta=2)
    assert derived.alpha == 0.75
    assert derived.rho_family == "tanh"
    assert derived.delta is None
    assert "alpha" in caplog.text


def test_quadratic_family():
    settings = EstimatorSettings.factory_default().derive(rho_family="quadratic")
    assert settings.cell_rho_params().is_quadratic
    assert settings.case_rho_params().is_quadratic


def test_repairs_unknown_and_missing_keys(caplog):
    settings = EstimatorSettings({"alpha": 0.6, "unknown": 3}, persist_repairs=False)
    assert settings.alpha == 0.6
    assert not hasattr(settings, "unknown")
    assert settings.cv_splits == 5
    assert "unknown" in caplog.text


def test_json_round_trip(tmp_path):
    settings = EstimatorSettings.factory_default().derive(rank=3, delta_grid=[0.1, 0.5])
    path = str(tmp_path / "settings.json")
    settings.save_to_json(path)
    loaded = EstimatorSettings.load_from_json(path)
    assert loaded.rank == 3 and loaded.delta_grid == [0.1, 0.5]
