import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasimfg.hamiltonian import DomainError, HamiltonianSpec, quadratic, soft_linear

SPECS = [quadratic(), soft_linear(1.0), soft_linear(3.0), HamiltonianSpec("quadratic", truncation=2.0),
         HamiltonianSpec("soft_linear", kappa=2.0, truncation=1.5)]
coord = st.floats(-5, 5, allow_nan=False)


@pytest.mark.parametrize("H", SPECS, ids=str)
@given(p=st.tuples(coord, coord))
def test_gradient_matches_finite_differences(H, p):
    p = np.array(p)
    eps = 1e-6
    fd = np.array([(H.value(None, p + eps * e) - H.value(None, p - eps * e)) / (2 * eps) for e in np.eye(2)])
    assert np.allclose(H.grad_p(None, p), fd, atol=1e-6)


@pytest.mark.parametrize("H", SPECS, ids=str)
@given(p=st.tuples(coord, coord))
def test_hessian_matches_finite_differences(H, p):
    p = np.array(p)
    r = np.linalg.norm(p)
    if H.truncation is not None and abs(r - H.truncation) < 1e-3:
        return  # kink of the truncated Hessian
    eps = 1e-6
    fd = np.stack([(H.grad_p(None, p + eps * e) - H.grad_p(None, p - eps * e)) / (2 * eps) for e in np.eye(2)], axis=1)
    assert np.allclose(H.hess_p(None, p), fd, atol=1e-5)


@pytest.mark.parametrize("H", SPECS, ids=str)
@given(p=st.tuples(coord, coord), q=st.tuples(coord, coord), t=st.floats(0, 1))
def test_convexity(H, p, q, t):
    p, q = np.array(p), np.array(q)
    mid = H.value(None, t * p + (1 - t) * q)
    assert mid <= t * H.value(None, p) + (1 - t) * H.value(None, q) + 1e-9


def test_vectorized_over_grid(rng):
    H = soft_linear(2.0)
    P = rng.normal(size=(2, 8, 8))
    vals = H.value(None, P)
    assert vals.shape == (8, 8)
    assert vals[3, 4] == pytest.approx(float(H.value(None, P[:, 3, 4])))
    assert H.hess_p(None, P).shape == (2, 2, 8, 8)


@pytest.mark.parametrize("H", [quadratic(), soft_linear(1.0), soft_linear(2.5)], ids=str)
@given(a=st.floats(-0.95, 0.95))
def test_lagrangian_matches_brute_force_sup(H, a):
    # L(a) = sup_p { -p a - H(p) } over a fine 1D grid
    p = np.linspace(-60, 60, 400001)[None]
    brute = np.max(-p[0] * a - H.value(None, p))
    assert float(H.lagrangian(None, np.array([a]))) == pytest.approx(brute, abs=1e-6)


@given(p=st.floats(-5, 5))
def test_optimal_control_attains_sup(p):
    # the feedback -H_p(p) is the maximiser: H(p) = -p a* - L(a*)
    H = soft_linear(1.5)
    pv = np.array([p])
    a = H.optimal_control(None, pv)
    assert float(H.value(None, pv)) == pytest.approx(float(-pv @ a - H.lagrangian(None, a)), abs=1e-9)


def test_soft_linear_drift_bounded():
    H = soft_linear(2.0)
    P = np.array([[1e6, -1e6, 0.0], [0.0, 1e6, 3.0]])
    assert np.all(np.linalg.norm(H.grad_p(None, P), axis=0) <= 2.0)


def test_truncation_grows_linearly():
    H = HamiltonianSpec("quadratic", truncation=1.0)
    assert float(H.value(None, np.array([3.0]))) == pytest.approx(0.5 + 1.0 * 2.0)
    assert np.allclose(H.grad_p(None, np.array([3.0])), [1.0])
    assert np.allclose(H.grad_p(None, np.array([0.5])), [0.5])


def test_domain_errors_and_validation():
    with pytest.raises(DomainError):
        soft_linear(1.0).lagrangian(None, np.array([1.0]))
    with pytest.raises(NotImplementedError):
        HamiltonianSpec("quadratic", truncation=1.0).lagrangian(None, np.array([0.1]))
    with pytest.raises(ValueError):
        HamiltonianSpec("cubic")
    with pytest.raises(ValueError):
        soft_linear(0.0)
    with pytest.raises(ValueError):
        HamiltonianSpec(truncation=-1.0)
    assert quadratic().max_at_zero() == 0.0
