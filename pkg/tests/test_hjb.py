import numpy as np
import pytest

from quasimfg.coupling import CouplingOperator, random_density
from quasimfg.hamiltonian import HamiltonianSpec, quadratic, soft_linear
from quasimfg.hjb import (
    ConvergenceError,
    HjbConfig,
    auto_truncation,
    cell_peclet,
    check_continuous_dependence,
    solve_discounted,
    solve_ergodic,
)
from quasimfg.torus import TorusGrid


def discrete_operator(grid, Hs, sigma, u):
    return -sigma * grid.laplacian(u) + Hs.value(grid.nodes, grid.gradient(u))


def manufactured(grid):
    x = grid.nodes
    u = 0.3 * np.cos(2 * np.pi * x[0]) + 0.1 * np.sin(4 * np.pi * x[0])
    if grid.dim == 2:
        u = u + 0.2 * np.sin(2 * np.pi * (x[0] + x[1]))
    return u - u.mean()


@pytest.mark.parametrize("dim,n", [(1, 64), (2, 32)])
@pytest.mark.parametrize("Hs", [quadratic(), soft_linear(2.0)], ids=str)
def test_ergodic_manufactured_solution(dim, n, Hs):
    g = TorusGrid(dim, n)
    u_star, lam_star, sigma = manufactured(g), 0.7, 0.5
    F = discrete_operator(g, Hs, sigma, u_star) + lam_star
    vp = solve_ergodic(Hs, F, sigma)
    assert vp.lam == pytest.approx(lam_star, abs=1e-9)
    assert np.abs(vp.u - u_star).max() < 1e-9
    assert vp.residual <= 1e-10
    assert abs(vp.u.mean()) < 1e-12


@pytest.mark.parametrize("Hs", [quadratic(), soft_linear(1.0)], ids=str)
def test_discounted_manufactured_solution(Hs):
    g = TorusGrid(1, 64)
    v_star, rho, sigma = manufactured(g) + 2.0, 0.3, 1.0
    F = discrete_operator(g, Hs, sigma, v_star) + rho * v_star
    vp = solve_discounted(Hs, F, sigma, rho)
    assert np.abs(vp.u - v_star).max() < 1e-9
    assert vp.lam == pytest.approx(rho * v_star.mean(), abs=1e-9)


def test_discounted_matches_false_transient_oracle():
    # explicit pseudo-time marching of v_t = s Lap v - H(Dv) - rho v + F to steady state
    g = TorusGrid(1, 32)
    Hs, sigma, rho = quadratic(), 0.5, 1.0
    F = np.cos(2 * np.pi * g.nodes[0]) + 0.5 * np.sin(6 * np.pi * g.nodes[0])
    v = np.zeros(g.shape)
    dt = 0.2 * g.h**2 / sigma
    for _ in range(int(40.0 / dt)):
        v = v + dt * (-discrete_operator(g, Hs, sigma, v) - rho * v + F)
    vp = solve_discounted(Hs, F, sigma, rho)
    assert np.abs(vp.u - v).max() < 1e-10


def test_constant_data():
    g = TorusGrid(1, 32)
    vp = solve_ergodic(quadratic(), np.full(g.shape, 1.25), 1.0)
    assert vp.lam == pytest.approx(1.25, abs=1e-12)
    assert np.abs(vp.u).max() < 1e-12
    vd = solve_discounted(quadratic(), np.full(g.shape, 1.25), 1.0, 0.5)
    assert np.allclose(vd.u, 2.5, atol=1e-12)
    z = solve_ergodic(quadratic(), g.zeros(), 1.0)
    assert z.lam == 0.0 or abs(z.lam) < 1e-14


def test_small_discount_limit():
    g = TorusGrid(1, 128)
    F = CouplingOperator.bump(g, 0.15, 1.0).eval_density(random_density(g, np.random.default_rng(4)))
    erg = solve_ergodic(quadratic(), F, 1.0)
    gaps = []
    for rho in (1e-1, 1e-3, 1e-5):
        v = solve_discounted(quadratic(), F, 1.0, rho)
        gaps.append((abs(rho * v.u.mean() - erg.lam), np.abs(v.u - v.u.mean() - erg.u).max()))
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps, axis=0) < 0)
    assert np.all(gaps[-1] <= 1e-5)


def test_warm_start_agrees_with_cold():
    g = TorusGrid(1, 64)
    F1 = 5 * np.cos(2 * np.pi * g.nodes[0])
    F2 = F1 + 0.3 * np.sin(2 * np.pi * g.nodes[0])
    cold = solve_ergodic(quadratic(), F2, 0.2)
    warm = solve_ergodic(quadratic(), F2, 0.2, warm_start=solve_ergodic(quadratic(), F1, 0.2))
    assert warm.lam == pytest.approx(cold.lam, abs=1e-10)
    assert np.abs(warm.u - cold.u).max() < 1e-9
    assert warm.iterations <= cold.iterations
    raw = solve_discounted(quadratic(), F2, 0.2, 0.1, warm_start=np.zeros(g.shape))
    ref = solve_discounted(quadratic(), F2, 0.2, 0.1)
    assert np.abs(raw.u - ref.u).max() < 1e-9


def test_large_potential_low_noise():
    # strongly nonlinear regime: continuation and full Newton steps still converge
    g = TorusGrid(1, 128)
    F = 700 * np.cos(4 * np.pi * g.nodes[0])
    vp = solve_ergodic(quadratic(), F, 1.0)
    assert vp.residual <= 1e-10
    assert cell_peclet(quadratic(), vp.u, 1.0) < 1.0


def test_convergence_error_carries_residual():
    g = TorusGrid(1, 64)
    F = 50 * np.cos(2 * np.pi * g.nodes[0])
    cfg = HjbConfig(max_newton=1, max_transient=1, rho_start=1e-6)
    with pytest.raises(ConvergenceError) as info:
        solve_ergodic(quadratic(), F, 0.05, cfg)
    assert info.value.residual > 0


def test_validation():
    g = TorusGrid(1, 32)
    with pytest.raises(ValueError):
        solve_discounted(quadratic(), g.zeros(), 1.0, 0.0)
    with pytest.raises(ValueError):
        HjbConfig(tol=0)
    with pytest.raises(ValueError):
        HjbConfig(rho_factor=1.5)


def test_auto_truncation_leaves_solution_unchanged():
    g = TorusGrid(1, 64)
    F = 20 * np.cos(2 * np.pi * g.nodes[0])
    Ht = auto_truncation(quadratic(), F, 1.0)
    assert isinstance(Ht, HamiltonianSpec) and Ht.truncation > 0
    a, b = solve_ergodic(quadratic(), F, 1.0), solve_ergodic(Ht, F, 1.0)
    assert abs(a.lam - b.lam) < 1e-10


def test_continuous_dependence_inequalities():
    g = TorusGrid(1, 128)
    F = CouplingOperator.bump(g, 0.15, 1.0)
    rng = np.random.default_rng(2)
    for _ in range(3):
        rep = check_continuous_dependence(quadratic(), F, random_density(g, rng), random_density(g, rng), 1.0, 0.5)
        assert rep.ok
        assert rep.v_gap <= rep.v_bound and rep.lambda_gap <= rep.lambda_bound
        assert np.isfinite(rep.chi_hat) and rep.kappa_F <= F.lipschitz_bound
