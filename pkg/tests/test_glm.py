import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from misclassreg.errors import SeparationError, SingularDesignError, ValidationError
from misclassreg.glm import (
    Separation,
    WeightedRow,
    detect_separation,
    fit_weighted_logistic,
    fit_weighted_poisson,
    rows_to_arrays,
    weighted_logistic_loglik,
    weighted_poisson_loglik,
)


def _poisson_data(seed, n=50, p=3):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    off = np.log(rng.uniform(5, 20, n))
    y = rng.poisson(np.exp(off + X @ np.array([-0.5, 0.3, -0.2][:p])))
    w = rng.uniform(0.2, 1.5, n)
    return X, y.astype(float), w, off


def test_poisson_intercept_closed_form():
    y = np.array([3.0, 0.0, 7.0, 2.0])
    off = np.array([10.0, 4.0, 12.0, 6.0])
    fit = fit_weighted_poisson(np.ones((4, 1)), y, offset_log=np.log(off))
    assert fit.coefficients[0] == pytest.approx(math.log(y.sum() / off.sum()), abs=1e-12)
    assert fit.info_matrix[0, 0] == pytest.approx(y.sum(), rel=1e-10)


def test_logistic_intercept_closed_form():
    y = np.array([1, 1, 1, 0, 0, 1, 0, 1.0])
    fit = fit_weighted_logistic(np.ones((8, 1)), y)
    assert fit.coefficients[0] == pytest.approx(math.log(5 / 3), abs=1e-12)


def test_weight_split_identity():
    X, y, _, off = _poisson_data(1)
    rng = np.random.default_rng(2)
    u = rng.uniform(0, 1, y.size)
    a = fit_weighted_poisson(X, y, offset_log=off)
    b = fit_weighted_poisson(np.vstack([X, X]), np.concatenate([y, y]), np.concatenate([u, 1 - u]),
                             np.concatenate([off, off]))
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_poisson_matches_generic_optimizer(seed):
    X, y, w, off = _poisson_data(seed)
    fit = fit_weighted_poisson(X, y, w, off)
    res = minimize(lambda b: -weighted_poisson_loglik(b, X, y, w, off), np.zeros(3), method="BFGS",
                   options={"gtol": 1e-12})
    np.testing.assert_allclose(fit.coefficients, res.x, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_logistic_matches_generic_optimizer(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(80), rng.standard_normal(80)])
    y = (rng.random(80) < 1 / (1 + np.exp(-(0.3 + 0.8 * X[:, 1])))).astype(float)
    w = rng.uniform(0.1, 1, 80)
    fit = fit_weighted_logistic(X, y, w)
    res = minimize(lambda b: -weighted_logistic_loglik(b, X, y, w), np.zeros(2), method="BFGS",
                   options={"gtol": 1e-12})
    np.testing.assert_allclose(fit.coefficients, res.x, atol=1e-6)


def test_logistic_recovers_truth():
    rng = np.random.default_rng(7)
    n = 500
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    truth = np.array([-0.4, 1.1])
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ truth))).astype(float)
    fit = fit_weighted_logistic(X, y)
    assert np.all(np.abs(fit.coefficients - truth) < 3 * fit.se)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 10))
def test_weight_scaling_invariance(seed, c):
    X, y, w, off = _poisson_data(seed)
    a = fit_weighted_poisson(X, y, w, off)
    b = fit_weighted_poisson(X, y, c * w, off)
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-9)
    np.testing.assert_allclose(b.info_matrix, c * a.info_matrix, rtol=1e-7)


def test_deviance_nonincreasing():
    X, y, w, off = _poisson_data(4)
    fit = fit_weighted_poisson(X, y, w, off, init=np.array([3.0, -2.0, 2.0]))
    assert np.all(np.diff(fit.deviance_trace) <= 1e-9 * max(1.0, abs(fit.deviance)))


def test_rows_interface():
    rows = [WeightedRow(r, 1.0, (1.0, v)) for r, v in [(1, 0.2), (0, -0.1), (1, 0.4), (0, 0.5), (1, -0.3)]]
    X, y, w, off = rows_to_arrays(rows)
    assert X.shape == (5, 2) and np.all(off == 0)
    with pytest.raises(ValidationError):
        WeightedRow(1, -0.5, (1.0,))


def test_zero_weight_rows_dropped():
    X, y, w, off = _poisson_data(5)
    a = fit_weighted_poisson(X, y, w, off)
    Xb = np.vstack([X, [[1.0, 1e6, -1e6]]])
    b = fit_weighted_poisson(Xb, np.append(y, 1e9), np.append(w, 0.0), np.append(off, 0.0))
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-12)


def test_singular_design_names_column():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(SingularDesignError) as ei:
        fit_weighted_poisson(X, np.ones(10), names=["a", "b", "c"])
    assert ei.value.column == "c"


def test_all_identical_responses_raise():
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    with pytest.raises(SeparationError):
        fit_weighted_logistic(X, np.ones(6))


def test_separation_examples():
    X = np.column_stack([np.ones(6), [0.1, 0.2, 0.3, 0.7, 0.8, 0.9]])
    y = np.array([0, 0, 0, 1, 1, 1.0])
    assert detect_separation(X, y) is Separation.COMPLETE
    # hand-built separating direction b = (-0.5, 1): s_i * X_i'b > 0 everywhere
    assert np.all((2 * y - 1) * (X @ np.array([-0.5, 1.0])) > 0)
    assert detect_separation(np.ones((5, 1)), np.ones(5)) is Separation.COMPLETE
    yq = np.array([0, 0, 1, 0, 1, 1.0])
    Xq = np.column_stack([np.ones(6), [0.1, 0.2, 0.5, 0.5, 0.8, 0.9]])
    assert detect_separation(Xq, yq) is Separation.QUASI
    yo = np.array([0, 1, 0, 1, 0, 1.0])
    assert detect_separation(X, yo) is Separation.NONE
    with pytest.raises(SeparationError):
        fit_weighted_logistic(X, y)


def _scan_separated(X, y, strict):
    """Brute-force search over a grid of directions."""
    s = 2 * y - 1
    grid = np.linspace(-1, 1, 41)
    for b in itertools.product(grid, repeat=X.shape[1]):
        b = np.array(b)
        if not np.any(b):
            continue
        m = s * (X @ b)
        if strict and np.all(m > 1e-9):
            return True
        if not strict and np.all(m >= -1e-12) and np.any(m > 1e-9):
            return True
    return False


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_complete_separation_matches_scan(seed):
    rng = np.random.default_rng(seed)
    n = 8
    X = np.column_stack([np.ones(n), rng.integers(-3, 4, n).astype(float)])
    y = (rng.random(n) < 0.5).astype(float)
    if np.all(y == y[0]):
        return
    got = detect_separation(X, y)
    if got is Separation.COMPLETE:
        assert _scan_separated(X, y, strict=True)
    if _scan_separated(X, y, strict=True):
        assert got is Separation.COMPLETE
    if _scan_separated(X, y, strict=False):
        assert got is not Separation.NONE
