import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mnbreg import numerics
from mnbreg.errors import DomainError, NotPositiveDefinite

pos = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@given(pos)
def test_log_gamma_matches_stdlib(x):
    assert numerics.log_gamma(x) == pytest.approx(math.lgamma(x), rel=1e-13, abs=1e-13)


@given(pos)
def test_log_gamma_recursion(x):
    assert numerics.log_gamma(x + 1) - numerics.log_gamma(x) == pytest.approx(
        math.log(x), rel=1e-10, abs=1e-10)


@given(st.floats(min_value=0.05, max_value=500))
def test_digamma_recursion_and_derivative(x):
    assert numerics.digamma(x + 1) - numerics.digamma(x) == pytest.approx(1 / x, rel=1e-10)
    h = 1e-5 * x
    fd = (math.lgamma(x + h) - math.lgamma(x - h)) / (2 * h)
    assert numerics.digamma(x) == pytest.approx(fd, rel=1e-6, abs=1e-6)


@given(st.floats(min_value=0.05, max_value=500))
def test_trigamma_is_digamma_derivative(x):
    assert numerics.trigamma(x) - numerics.trigamma(x + 1) == pytest.approx(x**-2, rel=1e-10)
    h = 1e-5 * x
    fd = (numerics.digamma(x + h) - numerics.digamma(x - h)) / (2 * h)
    assert numerics.trigamma(x) == pytest.approx(fd, rel=1e-5)


def test_known_values():
    assert numerics.log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-15)
    assert numerics.digamma(1.0) == pytest.approx(-0.5772156649015329, rel=1e-14)
    assert numerics.trigamma(1.0) == pytest.approx(math.pi**2 / 6, rel=1e-14)


@pytest.mark.parametrize("fn", [numerics.log_gamma, numerics.digamma, numerics.trigamma])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_special_domain(fn, bad):
    with pytest.raises(DomainError):
        fn(bad)


def test_array_input_returns_array():
    out = numerics.log_gamma(np.array([1.0, 2.0, 3.0]))
    assert isinstance(out, np.ndarray)
    np.testing.assert_allclose(out, [0.0, 0.0, math.log(2)], atol=1e-15)


@given(st.floats(min_value=1e-10, max_value=1 - 1e-10))
def test_normal_quantile_inverts_cdf(p):
    z = numerics.std_normal_quantile(p)
    assert numerics.std_normal_cdf(z) == pytest.approx(p, rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_normal_quantile_domain(p):
    with pytest.raises(DomainError):
        numerics.std_normal_quantile(p)


def test_normal_cdf_matches_erfc():
    for x in (-6.0, -1.3, 0.0, 0.7, 4.0):
        assert numerics.std_normal_cdf(x) == pytest.approx(
            0.5 * math.erfc(-x / math.sqrt(2)), rel=1e-14)


def _random_spd(rng, k):
    A = rng.standard_normal((k, k))
    return A @ A.T + k * np.eye(k)


@settings(max_examples=40)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_cholesky_solve_residual(k, seed):
    rng = np.random.default_rng(seed)
    A = _random_spd(rng, k)
    b = rng.standard_normal(k)
    x = numerics.cholesky_solve(A, b)
    assert np.max(np.abs(A @ x - b)) <= 1e-10 * np.max(np.abs(b)) * np.linalg.cond(A)
    L = numerics.cholesky_factor(A)
    np.testing.assert_allclose(L @ L.T, A, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(numerics.spd_inverse(A) @ A, np.eye(k), atol=1e-10)


def test_cholesky_rejects_indefinite_and_singular():
    with pytest.raises(NotPositiveDefinite):
        numerics.cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        numerics.cholesky_factor(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(DomainError):
        numerics.cholesky_factor(np.ones((2, 3)))


def _jacobi_eig(A, sweeps=60):
    """Cyclic Jacobi rotations; independent oracle for symmetric eigenproblems."""
    A = np.array(A, dtype=float)
    k = A.shape[0]
    V = np.eye(k)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off < 1e-15:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                J = np.eye(k)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                A = J.T @ A @ J
                V = V @ J
    return np.diag(A), V


@settings(max_examples=30)
@given(st.integers(1, 7), st.integers(0, 10**6))
def test_max_eigpair_matches_jacobi(k, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((k, k + 2))
    A = B @ B.T
    lam, v = numerics.max_eigpair(A)
    vals, vecs = _jacobi_eig(A)
    top = np.argmax(vals)
    assert lam == pytest.approx(vals[top], rel=1e-9)
    assert abs(abs(v @ vecs[:, top]) - 1.0) < 1e-6
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    assert v[nz[0]] > 0
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_max_eigpair_zero_matrix():
    lam, v = numerics.max_eigpair(np.zeros((3, 3)))
    assert lam == 0.0 and np.linalg.norm(v) == pytest.approx(1.0)


GRID = np.round(np.arange(0.1, 50.0001, 0.1), 10)


def test_recurrences_on_grid():
    np.testing.assert_allclose(numerics.digamma(GRID + 1) - numerics.digamma(GRID), 1 / GRID,
                               rtol=0, atol=1e-10)
    np.testing.assert_allclose(numerics.trigamma(GRID + 1) - numerics.trigamma(GRID),
                               -(GRID**-2), rtol=0, atol=1e-10)
    np.testing.assert_allclose(numerics.log_gamma(GRID + 1) - numerics.log_gamma(GRID),
                               np.log(GRID), rtol=0, atol=1e-12)


def test_thousand_spd_systems():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 21))
        A = _random_spd(rng, k)
        b = rng.standard_normal(k)
        x = numerics.cholesky_solve(A, b)
        worst = max(worst, np.max(np.abs(A @ x - b)) / (np.linalg.norm(A, 1) * np.max(np.abs(x))))
    assert worst < 1e-13


def test_rayleigh_quotient_lower_bound():
    rng = np.random.default_rng(7)
    B = rng.standard_normal((6, 9))
    A = B @ B.T
    lam, v = numerics.max_eigpair(A)
    U = rng.standard_normal((1000, 6))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    rq = np.einsum("ij,jk,ik->i", U, A, U)
    assert np.all(rq <= lam * (1 + 1e-12))
    assert np.max(np.abs(A @ v - lam * v)) <= 1e-8 * lam
