import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasimfg.fokker_planck import (
    DegenerateProblemError,
    DriftField,
    FokkerPlanckOperator,
    PositivityError,
    check_holder_half,
    default_dt,
    evolve,
    mass_drift,
    solve_stationary,
    step,
)
from quasimfg.hamiltonian import quadratic
from quasimfg.mfg import gibbs_density
from quasimfg.torus import TorusGrid

G1 = TorusGrid(1, 64)
G2 = TorusGrid(2, 16)


def random_drift(grid, seed, scale=20.0):
    rng = np.random.default_rng(seed)
    return DriftField(grid, scale * rng.normal(size=(grid.dim,) + grid.shape))


@given(st.integers(0, 2**31 - 1), st.sampled_from([1e-4, 1e-2, 1.0]), st.sampled_from([G1, G2]))
def test_mass_and_positivity_for_any_step(seed, dt, grid):
    b = random_drift(grid, seed)
    rng = np.random.default_rng(seed + 1)
    m = rng.uniform(0, 2, grid.shape)
    m /= grid.mean(m)
    m_new = step(m, b, 0.3, dt)
    assert mass_drift(grid, m, m_new) <= 1e-13
    assert m_new.min() >= 0.0


def test_generator_structure():
    op = FokkerPlanckOperator(random_drift(G2, 0), 0.5)
    A = op.matrix.toarray()
    assert np.allclose(A.sum(axis=0), 0.0, atol=1e-9 * np.abs(A).max())
    off = A - np.diag(np.diag(A))
    assert off.min() >= 0.0
    f = np.random.default_rng(1).normal(size=G2.shape)
    assert np.allclose(op.adjoint(f).ravel(), A.T @ f.ravel())


def test_gradient_drift_has_gibbs_stationary_density():
    for grid in (G1, G2):
        x = grid.nodes
        u = 2 * np.cos(2 * np.pi * x[0]) + (np.sin(2 * np.pi * x[1]) if grid.dim == 2 else 0)
        sigma = 0.7
        m = solve_stationary(DriftField.from_potential(grid, u), sigma)
        assert np.abs(m - gibbs_density(u, sigma)).max() < 1e-11


def test_from_value_quadratic_equals_potential_drift():
    u = np.sin(2 * np.pi * G2.nodes[0]) * np.cos(2 * np.pi * G2.nodes[1])
    b = DriftField.from_value(quadratic(), u, G2)
    assert np.allclose(b.values, DriftField.from_potential(G2, u).values)


def test_heat_kernel_discrete_oracle():
    # zero drift: backward Euler damps mode k by 1 / (1 + dt s lam_k) per step
    s, dt, steps = 0.5, 0.01, 30
    x = G1.nodes[0]
    m0 = 1 + 0.5 * np.cos(2 * np.pi * 3 * x)
    times, ms = evolve(m0, DriftField.zero(G1), s, steps * dt, dt, store_every=steps)
    lam = (2 / G1.h**2) * (1 - np.cos(2 * np.pi * 3 * G1.h))
    expected = 1 + 0.5 * (1 + dt * s * lam) ** (-steps) * np.cos(2 * np.pi * 3 * x)
    assert times[-1] == pytest.approx(steps * dt)
    assert np.abs(ms[-1] - expected).max() < 1e-13


def test_heat_kernel_continuum():
    s, T = 0.2, 0.1
    grid = TorusGrid(1, 256)
    x = grid.nodes[0]
    m0 = 1 + 0.5 * np.cos(2 * np.pi * x)
    _, ms = evolve(m0, DriftField.zero(grid), s, T, 1e-4, store_every=1000)
    exact = 1 + 0.5 * np.exp(-s * 4 * np.pi**2 * T) * np.cos(2 * np.pi * x)
    assert np.abs(ms[-1] - exact).max() < 2e-4


def test_constant_drift_translates():
    # a constant drift c moves a smooth bump by c t (centre of mass on the circle)
    grid = TorusGrid(1, 256)
    x = grid.nodes[0]
    m0 = np.exp(np.cos(2 * np.pi * x))
    m0 /= grid.mean(m0)
    c, T = 0.5, 0.2
    b = DriftField(grid, np.full((1, 256), c))
    _, ms = evolve(m0, b, 0.01, T, 1e-3, store_every=200)
    phase = lambda m: np.angle(np.mean(m * np.exp(2j * np.pi * x))) / (2 * np.pi)  # noqa: E731
    assert phase(ms[-1]) - phase(m0) == pytest.approx(c * T, abs=2e-3)


def test_equilibrium_is_fixed_point():
    u = 3 * np.cos(2 * np.pi * G1.nodes[0])
    b = DriftField.from_potential(G1, u)
    m = gibbs_density(u, 1.0)
    assert np.abs(step(m, b, 1.0, 0.1) - m).max() < 1e-12
    assert FokkerPlanckOperator(b, 1.0).relative_residual(m) < 1e-13


def test_default_dt():
    b = DriftField(G1, np.full((1, 64), 10.0))
    assert default_dt(b) == pytest.approx(min(G1.h / 44, 1e-3))


def test_errors():
    with pytest.raises(ValueError):
        DriftField(G1, np.zeros((2, 64)))
    with pytest.raises(ValueError):
        DriftField(G1, np.full((1, 64), np.nan))
    with pytest.raises(ValueError):
        FokkerPlanckOperator(DriftField.zero(G1), 0.0)
    with pytest.raises(ValueError):
        step(G1.ones(), DriftField.zero(G1), 1.0, -1.0)
    with pytest.raises(DegenerateProblemError):
        solve_stationary(DriftField(G1, np.full((1, 64), 1e5)), 1e-3)
    err = PositivityError("undershoot", 1e-3)
    assert err.suggested_dt == 1e-3 and "dt <=" in str(err)


def test_holder_half_report():
    # heat flow from a bump: the ratio stays bounded as pairs approach
    grid = TorusGrid(1, 128)
    m0 = np.exp(-((grid.nodes[0] - 0.5) ** 2) / 0.005)
    m0 /= grid.mean(m0)
    times, ms = evolve(m0, DriftField.zero(grid), 0.5, 0.2, 1e-3, store_every=10)
    rep = check_holder_half(list(zip(times, ms)), 0.0, 0.5, grid)
    assert np.isfinite(rep.C_T) and rep.C_T > 0
    assert rep.pairs == len(times) * (len(times) - 1) // 2
    with pytest.raises(ValueError):
        check_holder_half(list(zip(times, ms))[:2], 0.0, 0.5, grid)


def test_scaling_invariance_of_stationary_density():
    u = np.cos(2 * np.pi * G1.nodes[0])
    b = DriftField.from_potential(G1, u)
    assert np.abs(solve_stationary(b.scaled(2.0), 2.0) - solve_stationary(b, 1.0)).max() < 1e-10
    assert np.allclose(solve_stationary(DriftField.zero(G2), 1.0), 1.0, atol=1e-12)
