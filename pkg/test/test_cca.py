import numpy as np
import pytest
from cellrcov import cca_from_covariance, cellrcca_fit, cellrcca_transform, cellrcca_cv, CcaResult, \
    EstimatorSettings, BlockNotPD, DimensionMismatch, SingleCaseFold, planted_link_blocks, contaminate_blocks, \
    baseline_ridge_cca, spearman_corr
from cellrcov.cca import generalized_eigen_correlations
from cellrcov.utilities import make_generator

defaults = EstimatorSettings.factory_default()
fixed = defaults.derive(rank=2, delta=0.4)
linked = defaults.derive(rank=4, delta=0.05)


def random_pd(generator, p):
    A = generator.standard_normal((p, p))
    return A @ A.T + 0.5 * np.eye(p)


def test_planted_correlation():
    a, b = np.array([0.6, 0.8, 0.0]), np.array([0.0, 0.0, 1.0, 0.0])
    Sigma = np.eye(7)
    Sigma[:3, 3:] = 0.9 * np.outer(a, b)
    Sigma[3:, :3] = Sigma[:3, 3:].T
    result = cca_from_covariance(Sigma, 3, 2)
    assert result.correlations[0] == pytest.approx(0.9, abs=1e-10)
    assert abs(result.A[:, 0] @ a) > 0.95 and abs(result.B[:, 0] @ b) > 0.95
    assert result.A[np.argmax(np.abs(result.A[:, 0])), 0] > 0


def test_normalization_and_cross_oracle():
    generator = make_generator(0)
    for _ in range(10):
        Sigma = random_pd(generator, 7)
        result = cca_from_covariance(Sigma, 3, 3)
        np.testing.assert_allclose(result.A.T @ result.Sigma1 @ result.A, np.eye(3), atol=1e-8)
        np.testing.assert_allclose(result.B.T @ result.Sigma2 @ result.B, np.eye(3), atol=1e-8)
        assert np.all(np.diff(result.correlations) <= 1e-12)
        assert np.all((result.correlations >= 0) & (result.correlations <= 1))
        np.testing.assert_allclose(generalized_eigen_correlations(Sigma, 3, 3), result.correlations, atol=1e-8)


def test_block_errors():
    Sigma = np.eye(4)
    Sigma[0, 0] = -1
    with pytest.raises(BlockNotPD):
        cca_from_covariance(Sigma, 2, 1)
    with pytest.raises(ValueError):
        cca_from_covariance(np.eye(4), 2, 3)


def test_identical_blocks():
    X = make_generator(1).standard_normal((100, 3)) @ np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.0, 0.0, 1.0]])
    result = cellrcca_fit(X, X.copy(), 1, defaults.derive(rank=2, delta=0.01))
    assert result.correlations[0] >= 0.99


def test_independent_blocks():
    generator = make_generator(2)
    result = cellrcca_fit(generator.standard_normal((500, 5)), generator.standard_normal((500, 5)), 3, fixed)
    assert np.all(result.correlations < 0.3)


def test_transform():
    X1, X2 = planted_link_blocks(120, 4, 3, make_generator(3))
    result = cellrcca_fit(X1, X2, 2, linked)
    U, V = cellrcca_transform(result, X1, X2)
    assert U.shape == (120, 2) and V.shape == (120, 2)
    for pair in range(2):
        assert spearman_corr(U[:, pair], V[:, pair]) == pytest.approx(result.correlations[pair], abs=0.1)
    centers = result.centers
    U0, V0 = cellrcca_transform(result, centers[None, :4], centers[None, 4:])
    np.testing.assert_allclose(U0, 0, atol=1e-12)
    np.testing.assert_allclose(V0, 0, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        cellrcca_transform(result, X1, X2.column_subset([0, 1]))


def test_correlations_scale_invariant():
    X1, X2 = planted_link_blocks(120, 4, 3, make_generator(4))
    scales = np.array([0.1, 2.0, 5.0, 30.0])
    first = cellrcca_fit(X1, X2, 2, fixed)
    second = cellrcca_fit(X1.scaled(1 / scales), X2, 2, fixed)
    np.testing.assert_allclose(second.correlations, first.correlations, atol=1e-6)
    U1, _ = cellrcca_transform(first, X1, X2)
    U2, _ = cellrcca_transform(second, X1.scaled(1 / scales), X2)
    np.testing.assert_allclose(U2, U1, atol=1e-6)


def test_fit_errors():
    generator = make_generator(5)
    with pytest.raises(DimensionMismatch):
        cellrcca_fit(generator.standard_normal((30, 3)), generator.standard_normal((31, 3)), 1, fixed)
    with pytest.raises(ValueError):
        cellrcca_fit(generator.standard_normal((30, 3)), generator.standard_normal((30, 2)), 3, fixed)


def test_cv_fold_sizes():
    X1, X2 = planted_link_blocks(20, 3, 3, make_generator(6))
    with pytest.raises(SingleCaseFold):
        cellrcca_cv(X1, X2, 1, folds=20, settings=fixed)


def test_cv_planted_and_null():
    X1, X2 = planted_link_blocks(200, 5, 5, make_generator(7))
    assert cellrcca_cv(X1, X2, 2, folds=5, settings=defaults.derive(rank=5, delta=0.05)) > 0.9
    generator = make_generator(8)
    null = cellrcca_cv(generator.standard_normal((300, 4)), generator.standard_normal((300, 4)), 1, folds=5,
                       settings=fixed)
    assert abs(null) < 0.15


def test_json_round_trip(tmp_path):
    X1, X2 = planted_link_blocks(60, 3, 3, make_generator(9))
    result = cellrcca_fit(X1, X2, 2, fixed)
    path = str(tmp_path / "cca.json")
    result.save_to_json(path)
    loaded = CcaResult.load_from_json(path)
    np.testing.assert_allclose(loaded.A, result.A, rtol=1e-12, atol=0)
    np.testing.assert_allclose(loaded.correlations, result.correlations, rtol=1e-12, atol=0)


@pytest.mark.slow
def test_planted_link_robustness():
    generator = make_generator(10)
    X1, X2 = planted_link_blocks(200, 10, 10, generator)
    assert cellrcca_cv(X1, X2, 2, folds=10, settings=defaults) > 0.9
    Y1, Y2, _ = contaminate_blocks(X1, X2, 6.0, generator)
    robust = cellrcca_cv(Y1, Y2, 2, folds=10, settings=defaults)
    plain = cellrcca_cv(Y1, Y2, 2, folds=10, settings=defaults, method="rcov")
    assert robust - plain >= 0.2
    assert baseline_ridge_cca(Y1, Y2, 2, defaults).k == 2
