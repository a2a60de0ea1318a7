import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from poissonpnp.mirror import BurgMap, DomainError, QuadraticMap, hess_sqrt_noise, mirror_grad, mirror_grad_conj, mirror_map

positive = arrays(np.float64, st.integers(1, 20), elements=st.floats(1e-6, 1e6))


def test_burg_examples():
    b = mirror_map("burg")
    np.testing.assert_array_equal(mirror_grad(b, np.array([2.0])), [-0.5])
    np.testing.assert_array_equal(mirror_grad(b, np.ones(3)), -np.ones(3))
    np.testing.assert_array_equal(mirror_grad_conj(b, np.array([-0.5])), [2.0])
    np.testing.assert_array_equal(hess_sqrt_noise(b, np.array([2.0]), np.array([1.0])), [0.5])
    xi = np.random.default_rng(0).standard_normal(5)
    np.testing.assert_array_equal(hess_sqrt_noise(b, np.ones(5), xi), xi)


def test_quadratic_is_identity():
    q = QuadraticMap()
    x = np.random.default_rng(1).standard_normal(7)
    np.testing.assert_array_equal(q.grad(x), x)
    np.testing.assert_array_equal(q.grad_conj(q.grad(x)), x)
    np.testing.assert_array_equal(q.hess_sqrt_noise(x, x), x)


def test_round_trip_1000_points():
    b = BurgMap()
    x = np.random.default_rng(2).uniform(1e-3, 1e3, 1000)
    rel = np.abs(b.grad_conj(b.grad(x)) - x) / x
    assert rel.max() < 1e-12


@settings(max_examples=100)
@given(x=positive)
def test_round_trip_property(x):
    b = BurgMap()
    np.testing.assert_allclose(b.grad_conj(b.grad(x)), x, rtol=1e-12)


@settings(max_examples=100)
@given(y=arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, -1e-6)))
def test_conjugate_is_positive(y):
    assert np.all(BurgMap().grad_conj(y) > 0)


def test_domain_errors():
    b = BurgMap()
    with pytest.raises(DomainError):
        b.grad(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        b.grad_conj(np.array([-1.0, 0.0]))
    with pytest.raises(DomainError):
        b.hess_sqrt_noise(np.array([-1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        mirror_map("shannon")


def test_hessian_consistent_with_gradient():
    b = BurgMap()
    x = np.random.default_rng(3).uniform(0.1, 5.0, 50)
    h = 1e-6 * x
    jac = (b.grad(x + h) - b.grad(x - h)) / (2 * h)
    sq = b.hess_sqrt_noise(x, np.ones_like(x)) ** 2
    np.testing.assert_allclose(jac, sq, rtol=1e-6)
    np.testing.assert_allclose(b.hess_diag(x), sq, rtol=1e-14)


def test_noise_covariance():
    b = BurgMap()
    x = np.array([0.5, 1.0, 3.0])
    xi = np.random.default_rng(4).standard_normal((100_000, 3))
    cov = np.cov(b.hess_sqrt_noise(x, xi), rowvar=False)
    np.testing.assert_allclose(np.diag(cov), 1 / x**2, rtol=0.03)
    assert np.all(np.abs(cov - np.diag(np.diag(cov))) < 0.03 * np.max(1 / x**2))
