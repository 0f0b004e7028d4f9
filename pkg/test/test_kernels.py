import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from cellrcov import RhoParams, rho_tanh, psi_tanh, weight, m_scale, m_scale_columns, robust_standardize, \
    DegenerateScale, DataMatrix
from cellrcov.utilities import make_generator

default = RhoParams()


def test_plateau_and_consistency_constants():
    assert default.delta_m == pytest.approx(1.8811, abs=5e-4)
    assert default.d == pytest.approx(2 * default.delta_m, abs=1e-15)
    assert default.a == pytest.approx(0.3431, abs=5e-4)


def test_rho_values():
    assert rho_tanh(0.0, default) == 0
    assert rho_tanh(1.0, default) == pytest.approx(0.5)
    assert rho_tanh(5.0, default) == pytest.approx(default.d)
    assert rho_tanh(5.0, default) == pytest.approx(3.7622, abs=1e-3)
    eps = 1e-7
    assert abs(rho_tanh(default.b - eps, default) - rho_tanh(default.b + eps, default)) < 1e-6
    assert abs(rho_tanh(default.c - eps, default) - rho_tanh(default.c + eps, default)) < 1e-6


def test_psi_values():
    assert psi_tanh(0.0, default) == 0
    assert psi_tanh(1.2, default) == pytest.approx(1.2)
    assert psi_tanh(4.5, default) == 0
    assert psi_tanh(-1.2, default) == pytest.approx(-1.2)


def test_psi_matches_finite_difference_of_rho():
    grid = np.linspace(-6, 6, 1201)
    h = 1e-6
    numeric = (rho_tanh(grid + h, default) - rho_tanh(grid - h, default)) / (2 * h)
    assert np.max(np.abs(numeric - psi_tanh(grid, default))) < 1e-6


def test_rho_shape():
    grid = np.linspace(0, 10, 2001)
    values = rho_tanh(grid, default)
    assert np.all(np.diff(values) >= -1e-15)
    assert np.all(values <= default.d + 1e-15)
    assert np.allclose(rho_tanh(-grid, default), values)


def test_weights():
    t = np.array([0.0, 0.5, 2.0, 3.9, 4.0, 10.0])
    w = weight(t, default)
    assert w[0] == 1 and w[1] == 1
    assert 0 < w[2] < 1 and 0 < w[3] < 1
    assert w[4] == 0 and w[5] == 0
    assert np.all(weight(t, RhoParams.quadratic()) == 1)


def test_docstrings_have_no_escape_sequences():
    # a backslash in a non-raw docstring is an invalid escape
    assert "\\" not in rho_tanh.__doc__ and "\\" not in psi_tanh.__doc__
    assert "|t|" in rho_tanh.__doc__


def test_invalid_params():
    with pytest.raises(ValueError):
        RhoParams(b=4, c=1.5)
    with pytest.raises(ValueError):
        RhoParams(family="huber")


def test_m_scale_degenerate():
    with pytest.raises(DegenerateScale):
        m_scale(np.zeros(20))
    with pytest.raises(DegenerateScale):
        m_scale(np.array([0, 0, 0, 1.0, 2.0]))


def test_m_scale_gaussian_consistency():
    generators = [make_generator(seed) for seed in range(50)]
    scales = np.array([m_scale(generator.standard_normal(10000)) for generator in generators])
    assert 0.99 <= scales.mean() <= 1.01
    assert np.all((scales >= 0.97) & (scales <= 1.03))


def test_m_scale_skips_missing():
    sample = make_generator(3).standard_normal(200)
    with_gaps = np.concatenate([sample, [np.nan] * 17])
    assert m_scale(with_gaps) == pytest.approx(m_scale(sample), rel=1e-12)


def test_m_scale_columns_matches_univariate():
    data = make_generator(4).standard_normal((150, 4)) * np.array([1, 2, 0.5, 10])
    joint = m_scale_columns(data)
    for j in range(4):
        assert joint[j] == pytest.approx(m_scale(data[:, j]), rel=1e-10)


def test_quadratic_m_scale_is_rms():
    data = np.array([1.0, -2.0, 3.0, -4.0])
    assert m_scale(data, RhoParams.quadratic()) == pytest.approx(np.sqrt(np.mean(data ** 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.integers(5, 60), elements=st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-3)),
       st.floats(0.01, 100))
def test_m_scale_equivariance(sample, factor):
    assert m_scale(factor * sample) == pytest.approx(factor * m_scale(sample), rel=1e-9)
    assert m_scale(-sample) == pytest.approx(m_scale(sample), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_m_scale_permutation_invariance(seed):
    generator = make_generator(seed)
    sample = generator.standard_cauchy(40)
    assert m_scale(generator.permutation(sample)) == pytest.approx(m_scale(sample), rel=1e-12)


def test_robust_standardize():
    generator = make_generator(5)
    X = generator.standard_normal((300, 3))
    X[:, 1] *= 2.0
    X[7, 2] = np.nan
    Z, D = robust_standardize(X)
    assert np.isnan(Z.values[7, 2]) and not Z.mask[7, 2]
    np.testing.assert_allclose(Z.values[:, 1] * D.values[1], X[:, 1])
    assert D.values[1] == pytest.approx(m_scale(X[:, 1] - np.median(X[:, 1])), rel=1e-10)
    assert D.centers[1] == pytest.approx(np.median(X[:, 1]))
    Z_again, D_again = robust_standardize(Z)
    np.testing.assert_allclose(D_again.values, 1.0, rtol=1e-9)
    np.testing.assert_allclose(Z_again.filled(), Z.filled(), rtol=1e-9)


def test_robust_standardize_constant_column():
    X = DataMatrix(np.column_stack([np.arange(10.0), np.full(10, 3.0)]), columns=["a", "b"])
    with pytest.raises(DegenerateScale) as error:
        robust_standardize(X)
    assert error.value.column == 1
    assert "b" in str(error.value)
