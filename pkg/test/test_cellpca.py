import numpy as np
import pytest
from scipy.linalg import subspace_angles
from cellrcov import RhoParams, SubspaceFit, DataMatrix, EstimatorSettings, fit_subspace, loss, total_deviation, \
    cell_weights, case_weights, impute, solve_scores, EmptyRow, RankDeficient
from cellrcov.cellpca import cellpca_objective
from cellrcov.utilities import make_generator

tanh = RhoParams()
quadratic = RhoParams.quadratic()
defaults = EstimatorSettings.factory_default()


def low_rank_data(seed, n=100, p=10, k=2, noise=0.05):
    generator = make_generator(seed)
    V = np.linalg.qr(generator.standard_normal((p, k)))[0]
    U = generator.standard_normal((n, k)) * np.array([2.0, 1.5, 1.0][:k])[None, :]
    mu = generator.standard_normal(p)
    return mu[None, :] + U @ V.T + noise * generator.standard_normal((n, p)), V


def test_total_deviation_examples():
    assert total_deviation(np.zeros(3), [True] * 3, np.ones(3), tanh) == 0
    assert total_deviation([2.0, 9.0], [True, False], [2.0, 1.0], tanh) == pytest.approx(2 * np.sqrt(0.5))
    r, s = np.array([0.3, -1.2, 2.5]), np.array([0.5, 1.0, 2.0])
    assert total_deviation(3 * r, [True] * 3, 3 * s, tanh) == pytest.approx(3 * total_deviation(r, [True] * 3, s, tanh))
    with pytest.raises(EmptyRow):
        total_deviation([1.0, 2.0], [False, False], [1.0, 1.0], tanh)


def test_cell_and_case_weight_examples():
    weights = cell_weights(np.array([[0.0, 1.0, 6.0]]), np.ones(3), tanh)
    assert weights.tolist() == [[1.0, 1.0, 0.0]]
    fit = SubspaceFit(np.zeros(2), np.eye(2)[:, :1], np.zeros((3, 1)), np.ones(2), 1.0, np.zeros((3, 2)),
                      np.ones((3, 2)), np.ones(3), np.ones((3, 2), dtype=bool), [0.0],
                      deviations=np.array([0.0, 1.0, 5.0]))
    assert case_weights(fit, tanh).tolist() == [1.0, 1.0, 0.0]


def _manual_fit(Z, mu, V, U, sigma1, sigma2):
    R = Z - mu[None, :] - U @ V.T
    n, p = Z.shape
    return SubspaceFit(mu, V, U, sigma1, sigma2, R, np.ones((n, p)), np.ones(n), np.ones((n, p), dtype=bool), [0.0])


def test_quadratic_loss_is_mean_squared_residual():
    Z = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
    mu, V, U = np.array([0.2, -0.1]), np.array([[0.6], [0.8]]), np.array([[1.0], [2.0], [-0.5]])
    fit = _manual_fit(Z, mu, V, U, np.array([1.3, 0.7]), 0.9)
    brute_force = np.sum((Z - mu - U @ V.T) ** 2) / Z.size
    assert loss(Z, fit, quadratic, quadratic) == pytest.approx(brute_force, abs=1e-10)


def test_loss_bounds():
    Z, _ = low_rank_data(0, n=20, p=4, k=1)
    generator = make_generator(1)
    mu, V, U = generator.standard_normal(4), generator.standard_normal((4, 1)), generator.standard_normal((20, 1))
    fit = _manual_fit(Z, mu, V, U, np.full(4, 0.1), 0.5)
    assert loss(Z, fit, tanh, tanh) <= 0.5 ** 2 * tanh.d + 1e-12
    perfect = _manual_fit(mu[None, :] + U @ V.T, mu, V, U, np.ones(4), 1.0)
    assert loss(mu[None, :] + U @ V.T, perfect, tanh, tanh) == pytest.approx(0, abs=1e-20)


def test_solve_scores_on_subspace():
    generator = make_generator(2)
    V = np.linalg.qr(generator.standard_normal((6, 2)))[0]
    mu, u0 = generator.standard_normal(6), np.array([0.7, -1.1])
    z = mu + V @ u0
    np.testing.assert_allclose(solve_scores(z, np.ones(6, dtype=bool), mu, V, np.ones(6), 1.0, tanh), u0, atol=1e-8)


def test_solve_scores_quadratic_is_least_squares():
    generator = make_generator(3)
    V, mu, z = generator.standard_normal((5, 2)), generator.standard_normal(5), generator.standard_normal(5)
    expected = np.linalg.solve(V.T @ V, V.T @ (z - mu))
    np.testing.assert_allclose(solve_scores(z, np.ones(5, dtype=bool), mu, V, np.ones(5), 1.0, quadratic),
                               expected, atol=1e-10)


def test_solve_scores_interpolates_k_observed_cells():
    generator = make_generator(4)
    V, mu, z = generator.standard_normal((5, 2)), np.zeros(5), generator.standard_normal(5)
    mask = np.array([True, False, True, False, False])
    u = solve_scores(z, mask, mu, V, np.ones(5), 1.0, tanh)
    np.testing.assert_allclose((V @ u)[mask], z[mask], atol=1e-8)
    with pytest.raises(RankDeficient):
        solve_scores(z, [True, False, False, False, False], mu, V, np.ones(5), 1.0, tanh)


def test_exact_recovery():
    Z, V_true = low_rank_data(5, noise=1e-9)
    fit = fit_subspace(Z, 2, defaults)
    assert np.linalg.norm(Z - fit.fitted) / np.linalg.norm(Z) < 1e-6
    np.testing.assert_allclose(fit.V.T @ fit.V, np.eye(2), atol=1e-12)
    assert np.max(subspace_angles(fit.V, V_true)) < 1e-6


def test_quadratic_mode_is_classical_pca():
    Z, _ = low_rank_data(6, noise=0.3)
    fit = fit_subspace(Z, 2, defaults.derive(rho_family="quadratic"))
    centered = Z - Z.mean(axis=0)
    top = np.linalg.svd(centered, full_matrices=False)[2][:2].T
    assert np.max(subspace_angles(fit.V, top)) < 1e-6
    assert np.all(fit.W_cell == 1) and np.all(fit.w_case == 1)


def test_cellwise_outliers_are_downweighted():
    Z, V_true = low_rank_data(7)
    generator = make_generator(8)
    outlying = generator.random(Z.shape) < 0.2
    contaminated = np.where(outlying, 10.0, Z)
    fit = fit_subspace(contaminated, 2, defaults)
    assert np.degrees(np.max(subspace_angles(fit.V, V_true))) < 15
    assert np.mean(fit.W_cell[outlying] == 0) > 0.95
    classical = fit_subspace(contaminated, 2, defaults.derive(rho_family="quadratic"))
    assert np.degrees(np.max(subspace_angles(classical.V, V_true))) > 15


def test_objective_trace_is_monotone_and_weights_bounded():
    Z, _ = low_rank_data(9)
    generator = make_generator(10)
    Z[generator.random(Z.shape) < 0.1] = -8.0
    Z[:5] += 6.0
    fit = fit_subspace(Z, 2, defaults)
    trace = np.array(fit.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * np.maximum(1, np.abs(trace[:-1])))
    for weights in (fit.W_cell, fit.w_case):
        assert np.all((weights >= 0) & (weights <= 1))


def test_missing_cells():
    Z, _ = low_rank_data(11)
    mask = make_generator(12).random(Z.shape) > 0.15
    fit = fit_subspace(DataMatrix(Z, mask), 2, defaults)
    assert np.all(fit.R[~mask] == 0)
    imputed = impute(DataMatrix(Z, mask), fit).values
    np.testing.assert_allclose(imputed[~mask], fit.fitted[~mask])
    np.testing.assert_allclose(imputed, fit.imputed)
    kept = mask & (fit.W_cell == 1)
    np.testing.assert_allclose(imputed[kept], Z[kept], atol=1e-12)

    # values under the mask are never read
    altered = np.where(mask, Z, 1e6)
    other = fit_subspace(DataMatrix(altered, mask), 2, defaults)
    np.testing.assert_allclose(other.V, fit.V)
    np.testing.assert_allclose(other.U, fit.U)


def test_invalid_rank():
    Z, _ = low_rank_data(13, n=20, p=4)
    with pytest.raises(ValueError):
        fit_subspace(Z, 4, defaults)
    with pytest.raises(ValueError):
        fit_subspace(Z, 0, defaults)


def test_objective_decreases_with_rank():
    Z, _ = low_rank_data(14, noise=0.2)
    objectives = [cellpca_objective(Z, k, defaults) for k in range(3)]
    assert objectives[0] > objectives[1] > objectives[2]
