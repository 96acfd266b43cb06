"""Stationary Hamilton-Jacobi-Bellman solvers on the torus.

Both the discounted equation

    -s Lap v + H(x, Dv) + rho v = F

and the ergodic equation

    -s Lap u + H(x, Du) + lam = F,    <u> = 0

are solved by one Newton iteration written in the variables ``(w, mu)`` with
``<w> = 0``:

    -s Lap w + H(x, Dw) + rho w + mu = F.

For ``rho = 0`` this is the ergodic problem with ``lam = mu``; for ``rho > 0``
the discounted solution is ``v = w + mu / rho``.  Working with ``(w, mu)``
keeps the unknowns O(1) as ``rho -> 0``, so the small-discount limit can be
approached without cancellation.  ``Du`` uses central differences and the
Laplacian is the compact stencil, so the scheme is monotone (and obeys a
discrete comparison principle) as long as the cell Peclet number
``|H_p| h / (2 s)`` stays below one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .hamiltonian import HamiltonianSpec
from .torus import TorusGrid

log = logging.getLogger(__name__)

STALL_WINDOW = 5


class ConvergenceError(RuntimeError):
    """A solver did not reach its tolerance; carries the last residual and trace."""

    def __init__(self, message, residual=float("nan"), trace=None):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual
        self.trace = list(trace or [])


@dataclass(frozen=True)
class HjbConfig:
    tol: float = 1e-10
    max_newton: int = 50
    damping: float = 0.5
    rho_start: float = 1.0
    rho_factor: float = 0.1
    rho_floor: float = 1e-6
    stall_ratio: float = 0.99
    max_transient: int = 20000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if not 0 < self.rho_factor < 1:
            raise ValueError("rho_factor must lie in (0, 1)")


@dataclass
class ValuePair:
    """Solution of a stationary HJB equation.

    ``u`` is the value function (``v`` itself in discounted mode) and ``lam``
    the ergodic constant, or ``rho <v>`` in discounted mode.
    """

    u: np.ndarray
    lam: float
    mode: str
    rho: float = 0.0
    residual: float = float("nan")
    iterations: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def shifted(self) -> np.ndarray:
        """``u - <u>``; equals ``u`` in ergodic mode."""
        return self.u - np.mean(self.u)

    def state(self) -> tuple[np.ndarray, float]:
        return self.shifted, self.lam


def grid_of(f) -> TorusGrid:
    f = np.asarray(f)
    if f.ndim not in (1, 2) or len(set(f.shape)) != 1:
        raise ValueError(f"field of shape {f.shape} does not live on a square torus grid")
    return TorusGrid(f.ndim, f.shape[0])


@dataclass(frozen=True)
class _Pattern:
    perm: np.ndarray
    indices: np.ndarray
    indptr: np.ndarray


_PATTERNS: dict = {}


def _pattern(grid: TorusGrid) -> _Pattern:
    """CSC layout of the bordered Newton matrix, computed once per grid.

    Entries are listed as: diagonal, then (+e_k, -e_k) neighbours per axis,
    then the column of ones and the averaging row.
    """
    if grid in _PATTERNS:
        return _PATTERNS[grid]
    N = grid.size
    idx = np.arange(N).reshape(grid.shape)
    rows, cols = [idx.ravel()], [idx.ravel()]
    for k in range(grid.dim):
        rows += [idx.ravel(), idx.ravel()]
        cols += [np.roll(idx, -1, axis=k).ravel(), np.roll(idx, 1, axis=k).ravel()]
    rows += [np.arange(N), np.full(N, N)]
    cols += [np.full(N, N), np.arange(N)]
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    tag = sp.csc_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)), shape=(N + 1, N + 1))
    tag.sort_indices()
    pat = _Pattern(tag.data.astype(int) - 1, tag.indices.copy(), tag.indptr.copy())
    _PATTERNS[grid] = pat
    return pat


class _System:
    """Residual and Jacobian of the ``(w, mu)`` equation for fixed data."""

    def __init__(self, grid: TorusGrid, Hs: HamiltonianSpec, F, sigma: float, rho: float):
        self.grid, self.Hs, self.F, self.sigma, self.rho = grid, Hs, F, sigma, rho
        self.x = grid.nodes
        self.N = grid.size

    def residual(self, w, mu) -> np.ndarray:
        g = self.grid
        p = g.gradient(w)
        return -self.sigma * g.laplacian(w) + self.Hs.value(self.x, p) + self.rho * w + mu - self.F

    def merit(self, w, mu) -> float:
        return max(float(np.abs(self.residual(w, mu)).max()), abs(float(np.mean(w))))

    def newton_direction(self, w, mu):
        g = self.grid
        N = self.N
        hp = self.Hs.grad_p(self.x, g.gradient(w))
        pat = _pattern(g)
        c = self.sigma / g.h**2
        vals = [np.full(N, 2 * g.dim * c + self.rho)]
        for k in range(g.dim):
            adv = hp[k].ravel() / (2 * g.h)
            vals += [-c + adv, -c - adv]
        vals += [np.ones(N), np.full(N, 1.0 / N)]
        A = sp.csc_matrix((np.concatenate(vals)[pat.perm], pat.indices, pat.indptr), shape=(N + 1, N + 1))
        rhs = -np.concatenate([self.residual(w, mu).ravel(), [np.mean(w)]])
        sol = splu(A).solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise ConvergenceError("singular Newton system", self.merit(w, mu))
        return sol[:-1].reshape(g.shape), float(sol[-1])

    def transient(self, w, mu, target, max_steps, trace):
        """Semi-implicit pseudo-time stepping with ``mu(tau) = <F - H(Dw)>``."""
        g = self.grid
        hp_sup = float(np.abs(self.Hs.grad_p(self.x, g.gradient(w))).max())
        dtau = min(1.0, g.h / (1.0 + hp_sup))
        A = (
            (1.0 + dtau * self.rho) * sp.identity(self.N, format="csc")
            - dtau * self.sigma * g.laplacian_matrix.tocsc()
        )
        lu = splu(A.tocsc())
        for step in range(max_steps):
            Hv = self.Hs.value(self.x, g.gradient(w))
            mu = float(np.mean(self.F - Hv))
            w = lu.solve((w + dtau * (self.F - Hv - mu)).ravel()).reshape(g.shape)
            if step % 50 == 0:
                r = self.merit(w, mu)
                trace.append(("transient", step, r))
                if r <= target:
                    break
        mu = float(np.mean(self.F - self.Hs.value(self.x, g.gradient(w))))
        return w, mu


def _newton(system: _System, w, mu, cfg: HjbConfig, trace: list, path: list):
    """Full Newton steps, safeguarded against non-finite iterates.

    For convex ``H`` and a monotone scheme the undamped iteration is Howard's
    policy iteration and converges from any start, so no sufficient-decrease
    test is imposed on the sup-norm residual; it may rise transiently.  If the
    best residual fails to drop by 1% over ``STALL_WINDOW`` consecutive steps
    the solver switches once to false-transient pseudo-time stepping.
    """
    w = np.array(w, dtype=float)
    w -= np.mean(w)
    mu = float(mu)
    r = system.merit(w, mu)
    best = r
    trace.append(("newton", 0, r))
    iters = 0
    stall = 0
    fallback_used = False
    while r > cfg.tol:
        if iters >= cfg.max_newton:
            raise ConvergenceError("Newton iteration limit reached", r, trace)
        iters += 1
        dw, dmu = system.newton_direction(w, mu)
        alpha = 1.0
        while True:
            w_new, mu_new = w + alpha * dw, mu + alpha * dmu
            r_new = system.merit(w_new, mu_new)
            if np.isfinite(r_new):
                break
            alpha *= cfg.damping
            if alpha < 1e-10:
                raise ConvergenceError("Newton step produced non-finite values", r, trace)
        w, mu, r = w_new, mu_new, r_new
        trace.append(("newton", iters, r))
        if r < cfg.stall_ratio * best:
            stall = 0
        else:
            stall += 1
        best = min(best, r)
        if stall >= STALL_WINDOW and r > cfg.tol:
            if fallback_used:
                raise ConvergenceError("Newton stalled after false-transient fallback", r, trace)
            fallback_used = True
            path.append("false_transient")
            w, mu = system.transient(w, mu, max(cfg.tol, 1e-3 * best), cfg.max_transient, trace)
            path.append("newton")
            r = best = system.merit(w, mu)
            stall = 0
    return w, mu, r, iters


def _solve(Hs, F, sigma, rho, cfg, start, schedule):
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("coupling field has non-finite entries")
    if not sigma > 0:
        raise ValueError("diffusion coefficient must be positive")
    grid = grid_of(F)
    cfg = cfg or HjbConfig()
    trace, path = [], ["newton"]
    if start is None:
        w, mu = grid.zeros(), float(np.mean(F))
    else:
        w, mu = start
    total = 0
    for r_k in schedule:
        w, mu, res, it = _newton(_System(grid, Hs, F, sigma, r_k), w, mu, cfg, trace, path)
        total += it
    meta = {"path": path, "trace": trace, "continuation": list(schedule)}
    return grid, w, mu, res, total, meta


def _solve_with_restart(Hs, F, sigma, rho, cfg, start, schedule):
    """Warm-started solve; a failed warm start is retried from scratch with continuation."""
    try:
        return _solve(Hs, F, sigma, rho, cfg, start, schedule)
    except ConvergenceError as exc:
        if start is None:
            raise
        log.debug("warm start failed (%s); restarting with continuation", exc)
        out = _solve(Hs, F, sigma, rho, cfg, None, _continuation(cfg, rho))
        out[5]["path"].insert(0, "cold_restart")
        return out


def _continuation(cfg: HjbConfig, target: float) -> list[float]:
    floor = target if target > 0 else cfg.rho_floor
    rhos = []
    r = cfg.rho_start
    while r > floor * (1 + 1e-12):
        rhos.append(r)
        r *= cfg.rho_factor
    rhos.append(floor)
    if target == 0:
        rhos.append(0.0)
    return rhos


def solve_discounted(
    Hs: HamiltonianSpec, F_field, sigma_p: float, rho: float, cfg: HjbConfig | None = None, warm_start=None
) -> ValuePair:
    """Solve ``-s Lap v + H(x, Dv) + rho v = F`` on the grid of ``F_field``.

    Without ``warm_start`` the solve runs through a geometric continuation in
    ``rho`` from ``cfg.rho_start`` down to the target.  ``warm_start`` may be a
    previous :class:`ValuePair` or a raw ``v`` field.
    """
    if not rho > 0:
        raise ValueError("discount rate must be positive")
    cfg = cfg or HjbConfig()
    if warm_start is None:
        start, schedule = None, _continuation(cfg, rho)
    else:
        if isinstance(warm_start, ValuePair):
            start = (warm_start.shifted, warm_start.lam)
        else:
            v0 = np.asarray(warm_start, dtype=float)
            start = (v0 - v0.mean(), rho * float(v0.mean()))
        schedule = [rho]
    grid, w, mu, res, iters, meta = _solve_with_restart(Hs, F_field, sigma_p, rho, cfg, start, schedule)
    return ValuePair(w + mu / rho, mu, "discounted", rho, res, iters, meta)


def solve_ergodic(
    Hs: HamiltonianSpec, F_field, sigma_p: float, cfg: HjbConfig | None = None, warm_start: ValuePair | None = None
) -> ValuePair:
    """Solve ``-s Lap u + H(x, Du) + lam = F`` with ``<u> = 0`` for ``(lam, u)``."""
    cfg = cfg or HjbConfig()
    if warm_start is None:
        start, schedule = None, _continuation(cfg, 0.0)
    else:
        start, schedule = (warm_start.shifted, warm_start.lam), [0.0]
    grid, w, mu, res, iters, meta = _solve_with_restart(Hs, F_field, sigma_p, 0.0, cfg, start, schedule)
    return ValuePair(w, mu, "ergodic", 0.0, res, iters, meta)


def max_gradient(u) -> float:
    grid = grid_of(u)
    return float(np.sqrt(np.sum(grid.gradient(u) ** 2, axis=0)).max())


def auto_truncation(Hs: HamiltonianSpec, F_field, sigma_p: float, cfg=None, factor: float = 10.0) -> HamiltonianSpec:
    """Truncate ``H`` at ``factor`` times the largest gradient of a pilot ergodic solve."""
    pilot = solve_ergodic(replace(Hs, truncation=None), F_field, sigma_p, cfg)
    radius = factor * max(max_gradient(pilot.u), 1e-3)
    return replace(Hs, truncation=radius)


def cell_peclet(Hs: HamiltonianSpec, u, sigma_p: float) -> float:
    """``max |H_p(Du)| h / (2 s)``; the scheme is monotone when this is at most 1."""
    grid = grid_of(u)
    hp = Hs.grad_p(grid.nodes, grid.gradient(u))
    return float(np.abs(hp).max() * grid.h / (2 * sigma_p))


@dataclass
class DependenceReport:
    """Both sides of the continuous-dependence inequalities for one pair."""

    d1: float
    F_gap: float
    rho: float
    v_gap: float
    v_bound: float
    lambda_gap: float
    lambda_bound: float
    u_gap_c2: float
    kappa_F: float
    chi_hat: float
    slack: float = 1e-9

    @property
    def discounted_ok(self) -> bool:
        return self.v_gap <= self.v_bound * (1 + self.slack) + 1e-300

    @property
    def lambda_ok(self) -> bool:
        return self.lambda_gap <= self.lambda_bound * (1 + self.slack) + 1e-300

    @property
    def ok(self) -> bool:
        return self.discounted_ok and self.lambda_ok and np.isfinite(self.chi_hat)


def check_continuous_dependence(
    Hs, F_op, mu1, mu2, sigma_p: float, rho: float, cfg=None, kappa_F: float | None = None
) -> DependenceReport:
    """Evaluate the discounted sup-norm estimate and its ergodic analogues.

    * ``||v[mu1] - v[mu2]||_inf <= ||F(mu1) - F(mu2)||_inf / rho``
    * ``|lam[mu1] - lam[mu2]| <= kappa_F d_1(mu1, mu2)``
    * ``||u[mu1] - u[mu2]||_C2 / (kappa_F d_1)`` is reported as ``chi_hat``;
      its constant is not explicit, so only finiteness is checked.

    ``kappa_F`` defaults to the sampled estimate of the coupling's
    ``d_1``-Lipschitz constant.
    """
    from .coupling import estimate_d1_lipschitz
    from .metrics import c2_proxy, d1_grid

    grid = F_op.grid
    if kappa_F is None:
        kappa_F = estimate_d1_lipschitz(F_op, 64, 0).estimate
    F1, F2 = F_op.eval_density(mu1), F_op.eval_density(mu2)
    d1 = d1_grid(grid, mu1, mu2)
    F_gap = float(np.abs(F1 - F2).max())
    v1 = solve_discounted(Hs, F1, sigma_p, rho, cfg)
    v2 = solve_discounted(Hs, F2, sigma_p, rho, cfg, warm_start=v1)
    e1 = solve_ergodic(Hs, F1, sigma_p, cfg)
    e2 = solve_ergodic(Hs, F2, sigma_p, cfg, warm_start=e1)
    u_gap = c2_proxy(grid, e1.u - e2.u)
    chi = u_gap / (kappa_F * d1) if d1 > 0 else 0.0
    return DependenceReport(
        d1=d1,
        F_gap=F_gap,
        rho=rho,
        v_gap=float(np.abs(v1.u - v2.u).max()),
        v_bound=F_gap / rho,
        lambda_gap=abs(e1.lam - e2.lam),
        lambda_bound=kappa_F * d1,
        u_gap_c2=u_gap,
        kappa_F=kappa_F,
        chi_hat=chi,
    )
