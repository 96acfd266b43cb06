"""Coupled HJB / Fokker-Planck drivers.

* :func:`solve_ergodic_mfg` and :func:`solve_discounted_mfg` compute stationary
  equilibria by damped Picard iteration on the density.
* :func:`evolve_quasi_stationary` advances the quasi-stationary system in
  which, at every instant, the value function solves a stationary HJB
  equation against the current density, and the density is transported by
  the resulting optimal drift.
* :func:`convergence_diagnostics` measures the distance of a trajectory to an
  equilibrium and fits exponential rates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingOperator
from .fokker_planck import DriftField, FokkerPlanckOperator, default_dt, solve_stationary
from .hamiltonian import HamiltonianSpec
from .hjb import ConvergenceError, HjbConfig, ValuePair, solve_discounted, solve_ergodic
from .metrics import c2_proxy, fit_exponential, l2_norm
from .torus import TorusGrid, check_density

log = logging.getLogger(__name__)

MODES = ("ergodic", "discounted")
RESIDUAL_TOL = 1e-9


@dataclass
class MfgProblem:
    grid: TorusGrid
    Hs: HamiltonianSpec
    F: CouplingOperator
    sigma: float = 1.0
    sigma_p: float = 1.0
    rho: float = 0.1
    m0: np.ndarray | None = None
    T: float = 1.0
    dt: float | None = None
    hjb: HjbConfig = field(default_factory=HjbConfig)

    def __post_init__(self):
        for name in ("sigma", "sigma_p", "rho", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.F.grid != self.grid:
            raise ValueError("coupling lives on a different grid")
        if self.m0 is None:
            self.m0 = self.grid.ones()
        self.m0 = check_density(self.grid, self.m0, mass_tol=1e-10)

    def coupling_field(self, m) -> np.ndarray:
        return self.F.eval_density(m)

    def solve_hjb(self, m, mode: str = "ergodic", warm_start=None) -> ValuePair:
        Ff = self.F.eval_density(m)
        if mode == "ergodic":
            return solve_ergodic(self.Hs, Ff, self.sigma_p, self.hjb, warm_start)
        if mode == "discounted":
            return solve_discounted(self.Hs, Ff, self.sigma_p, self.rho, self.hjb, warm_start)
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")

    def drift(self, vp: ValuePair) -> DriftField:
        return DriftField.from_value(self.Hs, vp.u, self.grid)

    def fp_operator(self, vp: ValuePair) -> FokkerPlanckOperator:
        return FokkerPlanckOperator(self.drift(vp), self.sigma)


@dataclass
class EquilibriumTriple:
    """Stationary equilibrium.  In discounted mode ``u_bar`` is ``v`` and
    ``lambda_bar`` is ``rho <v>``."""

    lambda_bar: float
    u_bar: np.ndarray
    m_bar: np.ndarray
    mode: str = "ergodic"
    rho: float = 0.0
    residual: float = float("nan")
    iterations: int = 0
    trace: list = field(default_factory=list)
    value: ValuePair | None = None


def joint_residual(prob: MfgProblem, m, mode: str = "ergodic", vp: ValuePair | None = None) -> tuple[float, ValuePair]:
    """``max(HJB residual, ||m - stationary(-H_p(Du[m]))||_inf)``."""
    vp = prob.solve_hjb(m, mode, warm_start=vp)
    m_star = solve_stationary(prob.drift(vp), prob.sigma)
    return max(vp.residual, float(np.abs(m - m_star).max())), vp


def _fp_stationary(prob: MfgProblem, vp: ValuePair) -> np.ndarray:
    return solve_stationary(prob.drift(vp), prob.sigma)


def _picard(prob: MfgProblem, mode, damping, tol, max_iter, m_init, theta_floor=0.1, best_response=_fp_stationary):
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    g = prob.grid
    m = g.ones() if m_init is None else check_density(g, m_init, mass_tol=1e-10).copy()
    theta = damping
    vp, prev = None, None
    trace = []
    for it in range(1, max_iter + 1):
        vp = prob.solve_hjb(m, mode, warm_start=vp)
        inc = best_response(prob, vp) - m
        if prev is not None and g.mean(inc * prev) < 0 and theta > theta_floor:
            theta = max(0.5 * theta, theta_floor)
        m = m + theta * inc
        change = theta * l2_norm(inc)
        trace.append((it, theta, change))
        prev = inc
        # near the roundoff floor the increments stagnate; accept once the
        # joint residual itself is small
        if change <= tol or (it % 10 == 0 and change <= 100 * tol):
            res, vp_final = joint_residual(prob, m, mode, vp)
            if change <= tol or res <= RESIDUAL_TOL:
                return m, vp_final, res, it, trace
    raise ConvergenceError(f"Picard iteration did not converge in {max_iter} steps", trace[-1][2], trace)


def solve_ergodic_mfg(prob: MfgProblem, damping: float = 0.5, tol: float = 1e-11, max_iter: int = 500, m_init=None) -> EquilibriumTriple:
    """Ergodic equilibrium ``(lambda_bar, u_bar, m_bar)`` by damped Picard iteration.

    Each sweep solves the ergodic HJB against ``F(., m)`` and replaces ``m`` by
    a convex combination with the stationary density of the optimal drift.
    The damping halves (down to 0.1) whenever successive increments point in
    opposite directions.
    """
    m, vp, res, it, trace = _picard(prob, "ergodic", damping, tol, max_iter, m_init)
    return EquilibriumTriple(vp.lam, vp.u, m, "ergodic", 0.0, res, it, trace, vp)


def solve_discounted_mfg(prob: MfgProblem, damping: float = 0.5, tol: float = 1e-11, max_iter: int = 500, m_init=None) -> EquilibriumTriple:
    """Stationary discounted equilibrium ``(v_bar, mu_bar)`` at discount ``prob.rho``."""
    m, vp, res, it, trace = _picard(prob, "discounted", damping, tol, max_iter, m_init)
    return EquilibriumTriple(vp.lam, vp.u, m, "discounted", prob.rho, res, it, trace, vp)


def gibbs_density(u, sigma: float = 1.0) -> np.ndarray:
    """``exp(-u / s) / <exp(-u / s)>``."""
    e = np.exp(-(u - np.min(u)) / sigma)
    return e / np.mean(e)


def solve_closed_form(prob: MfgProblem, damping: float = 0.5, tol: float = 1e-11, max_iter: int = 500) -> EquilibriumTriple:
    """Equilibrium with the best response ``m = exp(-u/s) / <exp(-u/s)>``.

    Valid for the quadratic Hamiltonian with equal noise levels.  The
    Fokker-Planck solver is never called, so this is an independent check of
    :func:`solve_ergodic_mfg`.
    """
    if prob.Hs.kind != "quadratic" or prob.Hs.truncation is not None:
        raise ValueError("closed form needs the untruncated quadratic Hamiltonian")
    if prob.sigma != prob.sigma_p:
        raise ValueError("closed form needs equal noise levels")
    m, vp, _, it, trace = _picard(
        prob, "ergodic", damping, tol, max_iter, None, best_response=lambda p, v: gibbs_density(v.u, p.sigma)
    )
    res = max(vp.residual, float(np.abs(m - gibbs_density(vp.u, prob.sigma)).max()))
    return EquilibriumTriple(vp.lam, vp.u, m, "ergodic", 0.0, res, it, trace, vp)


# -- quasi-stationary evolution ---------------------------------------------


@dataclass
class QssTrajectory:
    mode: str
    rho: float
    dt: float
    times: np.ndarray
    lambdas: np.ndarray
    stored_times: list = field(default_factory=list)
    u_fields: list = field(default_factory=list)
    m_fields: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_density(self) -> np.ndarray:
        return self.m_fields[-1]


def evolve_quasi_stationary(
    prob: MfgProblem, mode: str = "ergodic", store_every: int = 1, warm_start: ValuePair | None = None
) -> QssTrajectory:
    """Run the quasi-stationary system from ``prob.m0`` up to ``prob.T``.

    Each step solves the stationary HJB equation (warm-started from the
    previous step) against ``F(., m_n)`` and then takes one backward-Euler
    Fokker-Planck step with the drift ``-H_p(Du_n)``.  Step ``n`` records
    ``lambda(t_n)`` together with the mass drift, the minimum of ``m_{n+1}``,
    the HJB residual and ``||b||_inf``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if store_every < 1:
        raise ValueError("store_every must be >= 1")
    g = prob.grid
    m = prob.m0.copy()
    vp = warm_start
    vp = prob.solve_hjb(m, mode, warm_start=vp)
    dt = prob.dt or default_dt(prob.drift(vp))
    steps = max(1, int(round(prob.T / dt)))
    times = np.arange(steps + 1) * dt
    lambdas = np.empty(steps + 1)
    diag = {k: np.empty(steps) for k in ("mass_drift", "min_m", "hjb_residual", "b_sup", "newton_iters")}
    traj = QssTrajectory(mode, prob.rho if mode == "discounted" else 0.0, dt, times, lambdas)
    for n in range(steps + 1):
        if n > 0:
            try:
                vp = prob.solve_hjb(m, mode, warm_start=vp)
            except ConvergenceError as exc:
                raise ConvergenceError(f"HJB solve failed at step {n}: {exc}", exc.residual, exc.trace) from exc
        lambdas[n] = vp.lam
        if n % store_every == 0 or n == steps:
            traj.stored_times.append(times[n])
            traj.u_fields.append(vp.u.copy())
            traj.m_fields.append(m.copy())
        if n == steps:
            break
        b = prob.drift(vp)
        m_new = FokkerPlanckOperator(b, prob.sigma).step(m, dt)
        diag["mass_drift"][n] = abs(g.mean(m_new) - g.mean(m))
        diag["min_m"][n] = m_new.min()
        diag["hjb_residual"][n] = vp.residual
        diag["b_sup"][n] = b.sup
        diag["newton_iters"][n] = vp.iterations
        m = m_new
    traj.diagnostics = diag
    return traj


# -- convergence diagnostics --------------------------------------------------


@dataclass
class DecayReport:
    times: np.ndarray
    gap_lambda: np.ndarray
    gap_u_c2proxy: np.ndarray
    gap_m_l2: np.ndarray
    lyapunov_V: np.ndarray
    fit_m: object = None
    fit_V: object = None
    floor: float = 0.0

    @property
    def v_monotone(self) -> bool:
        return bool(np.all(np.diff(self.lyapunov_V) <= 0))

    def rows(self):
        return zip(self.times, self.gap_lambda, self.gap_u_c2proxy, self.gap_m_l2, self.lyapunov_V)


def _fit_above(times, values, floor):
    keep = values > floor
    if keep.sum() < 4:
        return None
    return fit_exponential(times[keep], values[keep])


def convergence_diagnostics(traj: QssTrajectory, eq: EquilibriumTriple, floor: float = 1e-12) -> DecayReport:
    """Gaps to the equilibrium at every stored time plus exponential fits.

    The ``C^2`` distance of value functions is approximated by
    ``||e||_inf + ||De||_inf + ||D^2 e||_inf`` on the grid (mean-free parts in
    discounted mode).  Fits only use samples above ``floor``; when fewer than
    four remain (e.g. a trajectory sitting at equilibrium) the fit is None.
    """
    if len(traj.stored_times) < 4:
        raise ValueError("need at least 4 stored times")
    from .hjb import grid_of

    grid = grid_of(eq.m_bar)
    t = np.asarray(traj.stored_times)
    idx = np.rint(t / traj.dt).astype(int)
    lam = np.abs(traj.lambdas[idx] - eq.lambda_bar)
    ubar = eq.u_bar - np.mean(eq.u_bar)
    gap_u = np.array([c2_proxy(grid, (u - np.mean(u)) - ubar) for u in traj.u_fields])
    gap_m = np.array([l2_norm(m - eq.m_bar) for m in traj.m_fields])
    V = np.array([grid.mean((m - eq.m_bar) ** 2 / eq.m_bar) for m in traj.m_fields])
    return DecayReport(t, lam, gap_u, gap_m, V, _fit_above(t, gap_m, floor), _fit_above(t, V, floor**2), floor)


def estimate_poincare_constant(m_bar, samples: int = 200, rng_seed: int = 0, modes: int = 6) -> float:
    """Largest sampled ``||pi/m||_2 / ||D(pi/m)||_2`` over mean-free ``pi``.

    Test fields are ``pi = m f`` with ``f`` a random trigonometric polynomial
    made ``m``-orthogonal to constants; the lowest harmonics are always
    included.  Gradients are forward differences (the central stencil would
    annihilate the grid-scale mode and make the ratio unbounded).
    """
    from .hjb import grid_of

    m_bar = np.asarray(m_bar, dtype=float)
    grid = grid_of(m_bar)
    if m_bar.min() <= 1e-8:
        raise ValueError("weight touches zero")
    rng = np.random.default_rng(rng_seed)
    x = grid.nodes
    basis = []
    for axis in range(grid.dim):
        basis += [np.sin(2 * np.pi * x[axis]), np.cos(2 * np.pi * x[axis])]
    fields = list(basis)
    for _ in range(samples):
        f = grid.zeros()
        for _ in range(modes):
            k = rng.integers(-3, 4, size=grid.dim)
            if not k.any():
                continue
            amp = rng.normal() / (1.0 + np.sum(k**2))
            f += amp * np.cos(2 * np.pi * (np.tensordot(k, x, axes=1) + rng.uniform()))
        fields.append(f)
    best = 0.0
    for f in fields:
        f = f - grid.mean(m_bar * f)
        num = l2_norm(f)
        den = float(np.sqrt(np.mean(np.sum(grid.face_gradient(f) ** 2, axis=0))))
        if num == 0 or den == 0:
            continue
        best = max(best, num / den)
    return best


def perturbed_density(grid: TorusGrid, m_bar, amplitude: float, phase: float = 0.3, wavenumber: int = 1):
    """``m_bar + amplitude * pi`` with ``||pi||_2 = 1``, ``<pi> = 0``, ``pi = m_bar f``."""
    x = grid.nodes
    f = np.cos(2 * np.pi * (wavenumber * x[0] + phase))
    if grid.dim > 1:
        f = f + 0.5 * np.cos(2 * np.pi * (x[1] + phase))
    f = f - grid.mean(m_bar * f)
    pi = m_bar * f
    pi /= l2_norm(pi)
    out = m_bar + amplitude * pi
    if out.min() < 0:
        raise ValueError("perturbation too large: density would turn negative")
    return out / grid.mean(out)
