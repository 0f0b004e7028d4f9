import json
import numpy as np
import pandas as pd
import pytest
from cellrcov import CovarianceEstimate, planted_link_blocks
from cellrcov.cli import main
from cellrcov.utilities import make_generator

fast = ["--k", "2", "--delta", "0.3"]


def write_frame(path, values, columns=None, **extra):
    frame = pd.DataFrame(values, columns=columns or ["V{}".format(j + 1) for j in range(values.shape[1])])
    for name, column in extra.items():
        frame[name] = column
    frame.to_csv(path, index=False, na_rep="NA")
    return str(path)


def gaussian(seed, n=80, p=4):
    Sigma = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return make_generator(seed).standard_normal((n, p)) @ np.linalg.cholesky(Sigma).T


def test_estimate_json(tmp_path):
    values = gaussian(0)
    values[3, 1] = values[10, 2] = np.nan
    source = write_frame(tmp_path / "data.csv", values)
    output = str(tmp_path / "estimate.json")
    assert main(["estimate", source, "-o", output, "--imputed"] + fast) == 0
    with open(output) as file:
        json_dict = json.load(file)
    Sigma_hat = np.array(json_dict["Sigma_hat"])
    assert Sigma_hat.shape == (4, 4)
    np.testing.assert_allclose(Sigma_hat, Sigma_hat.T)
    assert np.min(np.linalg.eigvalsh(Sigma_hat)) > 0
    assert json_dict["columns"] == ["V1", "V2", "V3", "V4"]
    assert json_dict["rank_k"] == 2 and json_dict["ridge_delta"] == 0.3
    assert np.all(np.isfinite(json_dict["imputed"]))

    loaded = CovarianceEstimate._from_dict(json_dict)
    np.testing.assert_array_equal(loaded.Sigma_hat, Sigma_hat)


def test_estimate_csv(tmp_path):
    source = write_frame(tmp_path / "data.csv", gaussian(1))
    output = str(tmp_path / "sigma.csv")
    assert main(["estimate", source, "-o", output, "--format", "csv", "--imputed"] + fast) == 0
    frame = pd.read_csv(output, index_col=0)
    assert list(frame.index) == list(frame.columns) == ["V1", "V2", "V3", "V4"]
    assert pd.read_csv(tmp_path / "sigma_imputed.csv").shape == (80, 4)


def test_estimate_constant_column(tmp_path, capsys):
    values = gaussian(2)
    values[:, 2] = 1.0
    source = write_frame(tmp_path / "data.csv", values, columns=["a", "b", "flat", "d"])
    assert main(["estimate", source, "-o", str(tmp_path / "out.json")] + fast) == 2
    assert "flat" in capsys.readouterr().err
    assert not (tmp_path / "out.json").exists()


def test_missing_input_file(tmp_path):
    assert main(["estimate", str(tmp_path / "absent.csv"), "-o", str(tmp_path / "out.json")] + fast) == 1


def test_detect_with_labels(tmp_path):
    train = write_frame(tmp_path / "train.csv", gaussian(3, n=200))
    score_values = gaussian(4, n=60)
    score_values[:10] += 6.0
    labels = np.r_[np.ones(10, dtype=int), np.zeros(50, dtype=int)]
    score = write_frame(tmp_path / "score.csv", score_values, label=labels)
    output = str(tmp_path / "detect.json")
    assert main(["detect", train, score, "-o", output, "--labels", "label"] + fast) == 0
    with open(output) as file:
        json_dict = json.load(file)
    assert len(json_dict["distances"]) == 60
    assert json_dict["auc"] > 0.9
    assert sum(json_dict["anomalous"][:10]) >= 8


def test_detect_column_mismatch(tmp_path, capsys):
    train = write_frame(tmp_path / "train.csv", gaussian(5))
    score = write_frame(tmp_path / "score.csv", gaussian(6, p=5))
    assert main(["detect", train, score, "-o", str(tmp_path / "detect.json")] + fast) == 2
    assert "error" in capsys.readouterr().err


def test_simulate_single_scenario(tmp_path):
    output = str(tmp_path / "kl.csv")
    arguments = ["simulate", "-o", output, "--n", "30", "--p", "4", "--replications", "2", "--estimators", "RCov",
                 "--delta", "0.2"]
    assert main(arguments) == 0
    frame = pd.read_csv(output)
    assert len(frame) == 1
    assert list(frame.columns) == ["model", "p", "n", "scenario", "gamma", "estimator", "mean_kl", "se",
                                   "failures"]
    assert frame["mean_kl"][0] > 0


def test_simulate_grid_is_reproducible(tmp_path):
    arguments = ["--seed", "7", "simulate", "--n", "30", "--p", "4", "--replications", "2", "--estimators",
                 "RCov,Spearman", "--delta", "0.2", "--grid", "gamma=0:10:2"]
    first, second = str(tmp_path / "first.csv"), str(tmp_path / "second.csv")
    assert main(arguments + ["-o", first]) == 0
    assert main(arguments + ["-o", second]) == 0
    assert len(pd.read_csv(first)) == 12
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_simulate_bad_grid(tmp_path):
    assert main(["simulate", "-o", str(tmp_path / "kl.csv"), "--grid", "gamma=1,,2"]) == 2


def test_cca_identical_blocks(tmp_path):
    values = gaussian(8, n=100, p=3)
    first = write_frame(tmp_path / "first.csv", values)
    second = write_frame(tmp_path / "second.csv", values)
    output = str(tmp_path / "cca.json")
    assert main(["cca", first, second, "-o", output, "--k", "1", "--rank", "2", "--delta", "0.01"]) == 0
    with open(output) as file:
        json_dict = json.load(file)
    assert json_dict["correlations"][0] >= 0.99
    assert len(json_dict["first_variables"]) == 100


def test_cca_with_cross_validation(tmp_path):
    X1, X2 = planted_link_blocks(100, 4, 3, make_generator(9))
    first = write_frame(tmp_path / "first.csv", X1.values, X1.columns)
    second = write_frame(tmp_path / "second.csv", X2.values, X2.columns)
    output = str(tmp_path / "cca.json")
    assert main(["cca", first, second, "-o", output, "--k", "2", "--rank", "4", "--delta", "0.05", "--cv",
                 "--folds", "5"]) == 0
    with open(output) as file:
        json_dict = json.load(file)
    assert json_dict["first_columns"] == X1.columns
    assert 0 < json_dict["cv_mcc"] <= 1


def test_cca_errors(tmp_path):
    first = write_frame(tmp_path / "first.csv", gaussian(10, p=3))
    second = write_frame(tmp_path / "second.csv", gaussian(11, p=2))
    short = write_frame(tmp_path / "short.csv", gaussian(12, n=50, p=2))
    output = str(tmp_path / "cca.json")
    assert main(["cca", first, second, "-o", output, "--k", "3"] + ["--rank", "2", "--delta", "0.3"]) == 2
    assert main(["cca", first, short, "-o", output, "--k", "1"] + ["--rank", "2", "--delta", "0.3"]) == 2


def test_rank(tmp_path):
    source = write_frame(tmp_path / "data.csv", gaussian(13, n=120, p=5))
    output = str(tmp_path / "rank.json")
    assert main(["rank", source, "-o", output]) == 0
    with open(output) as file:
        json_dict = json.load(file)
    assert 1 <= json_dict["chosen_k"] <= 4
