from dataclasses import replace

import numpy as np
import pytest

from quasimfg.coupling import CouplingOperator, bump_density
from quasimfg.hamiltonian import quadratic, soft_linear
from quasimfg.metrics import l2_norm
from quasimfg.mfg import (
    MfgProblem,
    QssTrajectory,
    convergence_diagnostics,
    estimate_poincare_constant,
    evolve_quasi_stationary,
    gibbs_density,
    joint_residual,
    perturbed_density,
    solve_closed_form,
    solve_discounted_mfg,
    solve_ergodic_mfg,
)
from quasimfg.torus import TorusGrid

# frozen from the first verified run of the double-well benchmark (n = 128)
BENCH_LAMBDA = -388.8282395334699


def test_trivial_equilibrium():
    g = TorusGrid(1, 128)
    prob = MfgProblem(g, quadratic(), CouplingOperator.bump(g, 0.15, 0.0))
    eq = solve_ergodic_mfg(prob)
    assert abs(eq.lambda_bar) <= 1e-10
    assert np.abs(eq.u_bar).max() <= 1e-10
    assert np.abs(eq.m_bar - 1).max() <= 1e-10


def test_discounted_trivial():
    g = TorusGrid(1, 64)
    prob = MfgProblem(g, quadratic(), CouplingOperator.bump(g, 0.15, 0.0), rho=0.3)
    eq = solve_discounted_mfg(prob)
    assert np.abs(eq.u_bar).max() <= 1e-12
    assert np.abs(eq.m_bar - 1).max() <= 1e-12


def test_benchmark_equilibrium_regression(bench, bench_eq):
    assert bench_eq.lambda_bar == pytest.approx(BENCH_LAMBDA, rel=1e-9)
    assert bench_eq.residual <= 1e-9
    # the potential concentrates players in the two wells
    x = bench.grid.nodes[0]
    assert bench_eq.m_bar[np.argmin(np.abs(x - 0.25))] > 2.0
    assert bench_eq.m_bar[np.argmin(np.abs(x - 0.5))] < 0.5


def test_closed_form_agrees(bench, bench_eq):
    cf = solve_closed_form(bench)
    assert np.abs(cf.m_bar - bench_eq.m_bar).max() <= 1e-7
    assert np.abs(bench_eq.m_bar - gibbs_density(bench_eq.u_bar, 1.0)).max() <= 1e-7
    assert cf.lambda_bar == pytest.approx(bench_eq.lambda_bar, abs=1e-7)


def test_closed_form_preconditions(bench):
    with pytest.raises(ValueError):
        solve_closed_form(replace(bench, Hs=soft_linear(1.0)))
    with pytest.raises(ValueError):
        solve_closed_form(replace(bench, sigma_p=0.5))


def test_uniqueness_from_other_start(bench, bench_eq):
    other = solve_ergodic_mfg(bench, m_init=bump_density(bench.grid, 0.7, 0.05))
    assert np.abs(other.m_bar - bench_eq.m_bar).max() <= 1e-8
    assert other.lambda_bar == pytest.approx(bench_eq.lambda_bar, abs=1e-8)


def test_soft_linear_and_unequal_noise():
    g = TorusGrid(1, 64)
    prob = MfgProblem(g, soft_linear(2.0), CouplingOperator.bump(g, 0.2, 3.0, 2 * np.cos(2 * np.pi * g.nodes[0])),
                      sigma=0.5, sigma_p=0.3)
    eq = solve_ergodic_mfg(prob)
    res, _ = joint_residual(prob, eq.m_bar)
    assert res <= 1e-9 and eq.residual <= 1e-9


def test_discounted_converges_to_ergodic(bench, bench_eq):
    d = solve_discounted_mfg(replace(bench, rho=1e-4), m_init=bench_eq.m_bar)
    assert abs(d.lambda_bar - bench_eq.lambda_bar) <= 1e-3
    assert np.abs(d.u_bar - d.u_bar.mean() - bench_eq.u_bar).max() <= 1e-3
    assert np.abs(d.m_bar - bench_eq.m_bar).max() <= 1e-3


def test_strong_discount_contracts_faster():
    # recorded, not a hard requirement of the scheme: compare Picard counts
    g = TorusGrid(1, 64)
    prob = MfgProblem(g, quadratic(), CouplingOperator.bump(g, 0.15, 5.0), m0=bump_density(g, 0.3, 0.1))
    fast = solve_discounted_mfg(replace(prob, rho=10.0))
    slow = solve_discounted_mfg(replace(prob, rho=1e-2))
    assert fast.iterations <= slow.iterations


def test_validation():
    g = TorusGrid(1, 32)
    F = CouplingOperator.bump(g)
    with pytest.raises(ValueError):
        MfgProblem(g, quadratic(), F, sigma=0.0)
    with pytest.raises(ValueError):
        MfgProblem(g, quadratic(), F, dt=-1.0)
    with pytest.raises(ValueError):
        MfgProblem(TorusGrid(1, 64), quadratic(), F)
    with pytest.raises(ValueError):
        MfgProblem(g, quadratic(), F, m0=2 * g.ones())
    with pytest.raises(ValueError):
        evolve_quasi_stationary(MfgProblem(g, quadratic(), F), mode="myopic")
    with pytest.raises(ValueError):
        solve_ergodic_mfg(MfgProblem(g, quadratic(), F), damping=0.0)


def test_equilibrium_is_stationary_for_the_flow(bench, bench_eq):
    prob = replace(bench, m0=bench_eq.m_bar, T=0.1, dt=0.01)
    traj = evolve_quasi_stationary(prob)
    assert np.abs(traj.final_density - bench_eq.m_bar).max() <= 1e-9
    assert np.abs(traj.lambdas - bench_eq.lambda_bar).max() <= 1e-8


def test_flow_diagnostics_and_storage():
    g = TorusGrid(1, 64)
    prob = MfgProblem(g, quadratic(), CouplingOperator.bump(g, 0.15, 2.0), m0=bump_density(g, 0.3, 0.05),
                      T=0.2, dt=0.01)
    traj = evolve_quasi_stationary(prob, store_every=5)
    assert isinstance(traj, QssTrajectory)
    assert len(traj.times) == 21 and len(traj.stored_times) == 5
    assert traj.stored_times[-1] == pytest.approx(0.2)
    d = traj.diagnostics
    assert d["mass_drift"].max() <= 1e-13 and d["min_m"].min() >= 0
    assert d["hjb_residual"].max() <= 1e-10
    # congestion aversion spreads the bump
    assert traj.final_density.max() < prob.m0.max()


def test_small_discount_trajectory_consistency(bench, bench_eq):
    prob = replace(bench, m0=perturbed_density(bench.grid, bench_eq.m_bar, 0.05), T=1.0, dt=0.01, rho=1e-4)
    a = evolve_quasi_stationary(prob, "ergodic", store_every=10)
    b = evolve_quasi_stationary(prob, "discounted", store_every=10)
    assert max(l2_norm(x - y) for x, y in zip(a.m_fields, b.m_fields)) <= 1e-2


def test_convergence_diagnostics_on_synthetic_trajectory(bench, bench_eq):
    # hand-built trajectory decaying like exp(-2t) along a fixed direction
    g = bench.grid
    pi = perturbed_density(g, bench_eq.m_bar, 0.05) - bench_eq.m_bar
    t = np.arange(0, 2.01, 0.1)
    traj = QssTrajectory("ergodic", 0.0, 0.1, t, bench_eq.lambda_bar + np.exp(-2 * t), list(t),
                         [bench_eq.u_bar] * len(t), [bench_eq.m_bar + np.exp(-2 * s) * pi for s in t])
    rep = convergence_diagnostics(traj, bench_eq)
    assert rep.fit_m.delta == pytest.approx(2.0, rel=1e-9)
    assert rep.fit_V.delta == pytest.approx(4.0, rel=1e-9)
    assert rep.fit_m.r2 == pytest.approx(1.0)
    assert rep.v_monotone
    assert rep.gap_lambda == pytest.approx(np.exp(-2 * t), rel=1e-9)
    assert np.all(rep.gap_u_c2proxy == 0)
    # a trajectory sitting at equilibrium has nothing to fit
    flat = replace(traj, m_fields=[bench_eq.m_bar] * len(t))
    assert convergence_diagnostics(flat, bench_eq).fit_m is None


def test_perturbed_density():
    g = TorusGrid(1, 64)
    m_bar = bump_density(g, 0.5, 0.2)
    m0 = perturbed_density(g, m_bar, 0.05)
    assert g.mean(m0) == pytest.approx(1.0)
    assert l2_norm(m0 - m_bar) == pytest.approx(0.05, rel=1e-12)
    with pytest.raises(ValueError):
        perturbed_density(g, m_bar, 50.0)


def test_poincare_constant():
    g = TorusGrid(1, 128)
    # uniform weight: the sharp constant is 1 / (2 pi), attained by the first harmonic
    c = estimate_poincare_constant(g.ones())
    assert c == pytest.approx(1 / (2 * np.pi), rel=1e-3)
    assert c <= 1 / (2 * np.pi) * (1 + 1e-3)
    assert estimate_poincare_constant(bump_density(g, 0.5, 0.3)) > 0
    with pytest.raises(ValueError):
        estimate_poincare_constant(g.zeros())
