import numpy as np
import pytest
from cellrcov import estimate, select_rank, select_delta, cross_validate_delta, choose_delta, ridge_regularize, \
    sigma_sub, sigma_perp, robust_standardize, make_sigma, CovarianceEstimate, SubspaceFit, McdResult, DataMatrix, \
    EstimatorSettings, RankSelection, InvalidDelta, TooFewCases, InsufficientData, DegenerateScale, DegenerateNormalizer
from cellrcov.utilities import frobenius, make_generator

defaults = EstimatorSettings.factory_default()
fixed = defaults.derive(rank=2, delta=0.4)


def gaussian(seed, n, Sigma):
    return make_generator(seed).multivariate_normal(np.zeros(len(Sigma)), Sigma, size=n, method="cholesky")


def _fit(R, W_cell=None, w_case=None, M=None, V=None):
    n, p = R.shape
    V = np.eye(p)[:, :1] if V is None else V
    return SubspaceFit(np.zeros(p), V, np.zeros((n, V.shape[1])), np.ones(p), 1.0, R,
                       np.ones((n, p)) if W_cell is None else W_cell, np.ones(n) if w_case is None else w_case,
                       np.ones((n, p), dtype=bool) if M is None else M, [0.0])


# ------------------------------------------------ Building blocks ------------------------------------------------


def test_sigma_sub_examples():
    fit = _fit(np.zeros((5, 3)))
    expected = np.zeros((3, 3))
    expected[0, 0] = 4
    np.testing.assert_allclose(sigma_sub(fit, McdResult(np.zeros(1), [[4.0]], np.arange(3), 4.0)), expected)


def test_sigma_sub_basis_invariance():
    generator = make_generator(0)
    V = np.linalg.qr(generator.standard_normal((6, 2)))[0]
    U = generator.standard_normal((80, 2))
    Q = np.linalg.qr(generator.standard_normal((2, 2)))[0]
    first = sigma_sub(_fit(np.zeros((80, 6)), V=V), McdResult.classical(U))
    second = sigma_sub(_fit(np.zeros((80, 6)), V=V @ Q), McdResult.classical(U @ Q))
    np.testing.assert_allclose(first, second, atol=1e-10)
    assert np.all(np.abs(np.linalg.eigvalsh(first)[:-2]) < 1e-10)


def test_sigma_perp_examples():
    R = make_generator(1).standard_normal((10, 3))
    matrix, b = sigma_perp(_fit(R))
    assert b == pytest.approx(10)
    np.testing.assert_allclose(matrix, R.T @ R / 10)

    w_case = np.ones(10)
    w_case[3] = 0
    matrix, b = sigma_perp(_fit(R, w_case=w_case))
    kept = np.delete(R, 3, axis=0)
    np.testing.assert_allclose(matrix, kept.T @ kept / 9)

    single = np.array([[1.0, -2.0, 0.5]])
    matrix, b = sigma_perp(_fit(single))
    assert b == pytest.approx(1)
    np.testing.assert_allclose(matrix, np.outer(single[0], single[0]))

    with pytest.raises(DegenerateNormalizer):
        sigma_perp(_fit(R, w_case=np.zeros(10)))


def test_sigma_perp_ignores_masked_cells():
    R = make_generator(2).standard_normal((10, 3))
    M = np.ones((10, 3), dtype=bool)
    M[0, 1] = False
    first, _ = sigma_perp(_fit(R, M=M))
    R[0, 1] = 1e6
    second, _ = sigma_perp(_fit(R, M=M))
    np.testing.assert_allclose(first, second)


def test_ridge_regularize():
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(ridge_regularize(S, 0.5), [[2, 0.5], [0.5, 2]])
    np.testing.assert_allclose(ridge_regularize(S, 1.0), np.diag([2.0, 2.0]))
    for delta in (0, 1.5, -0.1):
        with pytest.raises(InvalidDelta):
            ridge_regularize(S, delta)


def test_choose_delta_tie_breaks_to_largest():
    diagonal = np.diag([1.0, 2.0, 3.0])
    assert choose_delta([(diagonal, diagonal), (diagonal, diagonal)], [0.1, 0.5, 0.9]) == 0.9


def test_singleton_grid():
    Z = gaussian(3, 30, np.eye(4))
    assert select_delta(Z, 1, defaults.derive(delta_grid=[0.3])) == 0.3


def test_cross_validation_needs_two_splits():
    def failing(subset):
        raise InsufficientData("no")

    with pytest.raises(InsufficientData):
        cross_validate_delta(gaussian(4, 30, np.eye(3)), failing, defaults)


# ---------------------------------------------------- Estimate ---------------------------------------------------


def test_classical_reduction():
    settings = defaults.derive(rho_family="quadratic", score_scatter="sample", rank=3, delta=0.5)
    for seed in range(20):
        X = make_generator(seed).standard_normal((50, 8)) @ make_generator(100 + seed).standard_normal((8, 8))
        result = estimate(X, settings)
        Z = X / result.D.values[None, :]
        sample = np.cov(Z, rowvar=False, bias=True)
        assert frobenius(result.Sigma_sub + result.Sigma_perp - sample) / frobenius(sample) < 1e-8


def test_scale_equivariance():
    for seed in range(20):
        generator = make_generator(seed)
        X = gaussian(seed, 40, make_sigma("A06", 5))
        X[generator.random(X.shape) < 0.05] = 8.0
        d = generator.uniform(0.1, 10, 5)
        first = estimate(X, fixed).Sigma_hat
        second = estimate(X * d[None, :], fixed).Sigma_hat
        expected = d[:, None] * first * d[None, :]
        assert frobenius(second - expected) / frobenius(expected) < 1e-8


def test_estimate_structure():
    X = gaussian(5, 100, make_sigma("A09", 6))
    X[make_generator(6).random(X.shape) < 0.1] = np.nan
    result = estimate(X, fixed)
    np.testing.assert_allclose(result.Sigma_hat, result.Sigma_hat.T, atol=1e-10)
    assert np.min(np.linalg.eigvalsh(result.Sigma_hat)) > 0
    np.testing.assert_allclose(result.recompose(), result.Sigma_hat, atol=1e-12)
    np.testing.assert_allclose(np.diag(result.Sigma_perp_R), np.diag(result.Sigma_perp), atol=1e-10)
    assert result.rank_k == 2 and result.ridge_delta == 0.4
    assert result.imputed.shape == X.shape and np.isfinite(result.imputed).all()
    assert np.allclose(np.diag(result.correlation()), 1)


def test_masked_cells_are_never_read():
    X = gaussian(7, 60, make_sigma("A06", 5))
    mask = make_generator(8).random(X.shape) > 0.1
    first = estimate(DataMatrix(X, mask), fixed).Sigma_hat
    second = estimate(DataMatrix(np.where(mask, X, -1e9), mask), fixed).Sigma_hat
    np.testing.assert_allclose(first, second)


def test_variable_permutation_equivariance():
    X = gaussian(9, 80, make_sigma("A09", 6))
    order = np.array([3, 0, 5, 1, 4, 2])
    first = estimate(X, fixed).Sigma_hat
    second = estimate(X[:, order], fixed).Sigma_hat
    np.testing.assert_allclose(second, first[np.ix_(order, order)], rtol=1e-7, atol=1e-9)


def test_row_permutation_invariance():
    X = gaussian(21, 80, make_sigma("A09", 6))
    X[3, 1], X[40, 4] = 30.0, -25.0
    order = make_generator(22).permutation(80)
    first, second = estimate(X, fixed), estimate(X[order], fixed)
    assert frobenius(second.Sigma_hat - first.Sigma_hat) / frobenius(first.Sigma_hat) < 1e-8
    assert sorted((int(order[i]), j) for i, j in second.flagged_cells) == sorted(first.flagged_cells)
    assert (3, 1) in first.flagged_cells


def test_principal_axes():
    result = estimate(gaussian(23, 120, make_sigma("planar", 8)), fixed)
    eigenvalues, eigenvectors = result.principal_axes()
    assert len(eigenvalues) == 2 and eigenvectors.shape == (8, 2)
    assert eigenvalues[0] >= eigenvalues[1] > 0
    np.testing.assert_allclose(eigenvectors.T @ eigenvectors, np.eye(2), atol=1e-10)
    low_rank = result.D.values[:, None] * result.Sigma_sub * result.D.values[None, :]
    np.testing.assert_allclose((eigenvectors * eigenvalues) @ eigenvectors.T, low_rank, atol=1e-8)
    np.testing.assert_allclose(result._to_dict()["axis_variances"], eigenvalues)


def test_rank_fallback_is_recorded(monkeypatch, tmp_path):
    monkeypatch.setattr("cellrcov.covariance.select_rank",
                        lambda Z, settings: RankSelection(0, [], [0.1], 95.0, 1))
    result = estimate(gaussian(24, 60, np.eye(5)), defaults.derive(delta=0.5))
    assert result.rank_k == 1 and result.rank_fallback
    path = str(tmp_path / "fallback.json")
    result.save_to_json(path)
    assert CovarianceEstimate.load_from_json(path).rank_fallback
    assert not estimate(gaussian(24, 60, np.eye(5)), fixed).rank_fallback


def test_flagged_cells():
    X = gaussian(10, 100, make_sigma("A09", 6))
    X[4, 2] = 50.0
    result = estimate(X, fixed)
    assert (4, 2) in result.flagged_cells
    assert result.cell_weights[4, 2] == 0


def test_estimate_errors():
    with pytest.raises(TooFewCases) as error:
        estimate(np.ones((4, 3)), fixed)
    assert str(error.value).startswith("[input]")
    with pytest.raises(InsufficientData):
        estimate(gaussian(11, 20, np.eye(1)), fixed)
    X = gaussian(12, 20, np.eye(3))
    X[:, 1] = 2.0
    with pytest.raises(DegenerateScale) as error:
        estimate(X, fixed)
    assert error.value.stage == "standardize" and error.value.column == 1


def test_automatic_rank_and_delta():
    X = gaussian(13, 100, make_sigma("A09", 8))
    result = estimate(X, defaults.derive(pa_references=20))
    assert result.rank_k >= 1
    assert result.ridge_delta in defaults.delta_grid


def test_json_round_trip(tmp_path):
    result = estimate(gaussian(14, 50, make_sigma("dense", 4)), fixed)
    result.export_imputed = True
    path = str(tmp_path / "estimate.json")
    result.save_to_json(path)
    loaded = CovarianceEstimate.load_from_json(path)
    np.testing.assert_allclose(loaded.Sigma_hat, result.Sigma_hat, rtol=1e-12, atol=0)
    np.testing.assert_allclose(loaded.imputed, result.imputed, rtol=1e-12, atol=0)
    assert loaded.rank_k == 2 and loaded.columns == result.columns


# ------------------------------------------------- Rank selection ------------------------------------------------


def test_rank_selection_record():
    Z, _ = robust_standardize(gaussian(15, 60, make_sigma("planar", 10)))
    selection = select_rank(Z, defaults.derive(pa_references=20))
    assert len(selection.reference_quantiles) == min(59, 9, defaults.pa_max_rank)
    assert len(selection.observed_gaps) >= selection.chosen_k
    assert selection.n_reference == 20


@pytest.mark.slow
def test_rank_selection_planar_and_noise():
    Sigma = make_sigma("planar", 30)
    planar = [select_rank(robust_standardize(gaussian(seed, 100, Sigma))[0], defaults).chosen_k
              for seed in range(50)]
    assert sum(k == 2 for k in planar) >= 45
    noise = [select_rank(robust_standardize(gaussian(1000 + seed, 100, np.eye(30)))[0], defaults).chosen_k
             for seed in range(50)]
    assert sum(k == 0 for k in noise) >= 45


@pytest.mark.slow
def test_ridge_grows_when_variables_outnumber_cases():
    Sigma = make_sigma("A06", 120)
    settings = defaults.derive(rank=2)
    median = float(np.median(settings.delta_grid))
    chosen = [select_delta(robust_standardize(gaussian(300 + seed, 100, Sigma))[0], 2, settings)
              for seed in range(10)]
    assert sum(delta >= median for delta in chosen) >= 7
