"""The N-player game and its mean-field limit.

Players move by Euler-Maruyama on the torus,

    X^i <- X^i - H_p(Du(X^i)) dt + sqrt(2 s dt) xi^i,

where ``u`` solves the stationary HJB equation against the coupling evaluated
on the empirical measure of the ensemble (``full_empirical``) or of the other
players (``leave_one_out``).  Noise comes from a Philox generator keyed by
``(seed, replica)`` whose counter encodes the stream and the step index, so
every increment is addressable and runs are reproducible bitwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .hjb import ValuePair, solve_discounted, solve_ergodic
from .metrics import EmpiricalMeasure, d1_circle, fit_power_law
from .torus import TorusGrid, wrap

log = logging.getLogger(__name__)

DRIFT_SOURCES = ("full_empirical", "leave_one_out")
NOISE_STREAM, INIT_STREAM, FAST_STREAM = 0, 1, 2


def philox(seed: int, replica: int, stream: int, step: int) -> np.random.Generator:
    """Generator for one ``(seed, replica, stream, step)`` address."""
    bitgen = np.random.Philox(key=[seed, replica], counter=[0, 0, stream, step])
    return np.random.Generator(bitgen)


def sample_density(grid: TorusGrid, m, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw points from a grid density: pick a node, then jitter uniformly in its cell."""
    w = np.asarray(m, dtype=float).ravel()
    w = np.clip(w, 0.0, None)
    idx = rng.choice(grid.size, size=size, p=w / w.sum())
    nodes = grid.points()[idx]
    jitter = rng.uniform(-0.5, 0.5, size=(size, grid.dim)) * grid.h
    return wrap(nodes + jitter)


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    sigma: float
    seed: int = 0
    replica: int = 0
    step_index: int = 0
    warm: ValuePair | None = field(default=None, repr=False, compare=False)
    warm_loo: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 players")
        if not self.sigma > 0:
            raise ValueError("noise level must be positive")
        self.positions = wrap(x)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def increments(self) -> np.ndarray:
        """Standard normal increments for the current step (row ``i`` for player ``i``)."""
        return philox(self.seed, self.replica, NOISE_STREAM, self.step_index).standard_normal((self.N, self.dim))

    @classmethod
    def from_density(cls, grid, m, N, sigma, seed=0, replica=0) -> "ParticleEnsemble":
        rng = philox(seed, replica, INIT_STREAM, N)
        return cls(sample_density(grid, m, N, rng), sigma, seed, replica)


def _solve(prob, Ff, mode, warm):
    if mode == "ergodic":
        return solve_ergodic(prob.Hs, Ff, prob.sigma_p, prob.hjb, warm)
    if mode == "discounted":
        return solve_discounted(prob.Hs, Ff, prob.sigma_p, prob.rho, prob.hjb, warm)
    raise ValueError(f"unknown mode {mode!r}")


def drift_at(prob, u, x) -> np.ndarray:
    """``-H_p(Du(x))`` at off-grid points, with ``Du`` the spline of the central gradient."""
    g = prob.grid
    grad = g.gradient(u)
    p = np.stack([g.spline(grad[k])(x) for k in range(g.dim)])
    return -prob.Hs.grad_p(x.T, p).T


def empirical_field(prob, positions) -> np.ndarray:
    return prob.F.eval_empirical(positions)


def leave_one_out_fields(prob, positions) -> list[np.ndarray]:
    """``F(., nu^{-i})`` for every player, from per-particle Fourier modes."""
    F = prob.F
    g = prob.grid
    X = np.asarray(positions, dtype=float).reshape(-1, g.dim)
    N = X.shape[0]
    full = F.empirical_modes(X) * N
    out = []
    for i in range(N):
        own = F.empirical_modes(X[i : i + 1])
        out.append(F.eval_modes((full - own) / (N - 1)))
    return out


def step_ensemble(ens: ParticleEnsemble, prob, dt: float, mode: str = "ergodic", drift_source: str = "full_empirical", noise=None) -> ParticleEnsemble:
    """Advance every player by one Euler-Maruyama step.

    ``full_empirical`` performs one HJB solve against ``F(., nu^N)``;
    ``leave_one_out`` performs ``N`` solves, one per player against the
    measure of the others.  ``noise`` overrides the generator's increments.
    ``dt = 0`` returns an unchanged copy without consuming randomness.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if drift_source not in DRIFT_SOURCES:
        raise ValueError(f"unknown drift source {drift_source!r}; expected one of {DRIFT_SOURCES}")
    if dt == 0:
        return replace(ens, positions=ens.positions.copy())
    X = ens.positions
    warm, warm_loo = ens.warm, ens.warm_loo
    if drift_source == "full_empirical":
        warm = _solve(prob, empirical_field(prob, X), mode, warm)
        b = drift_at(prob, warm.u, X)
    else:
        fields = leave_one_out_fields(prob, X)
        warm_loo = warm_loo or [None] * ens.N
        warm_loo = [_solve(prob, f, mode, w) for f, w in zip(fields, warm_loo)]
        b = np.stack([drift_at(prob, vp.u, X[i : i + 1])[0] for i, vp in enumerate(warm_loo)])
    xi = ens.increments() if noise is None else np.asarray(noise, dtype=float).reshape(X.shape)
    X_new = wrap(X + b * dt + np.sqrt(2 * ens.sigma * dt) * xi)
    return replace(ens, positions=X_new, step_index=ens.step_index + 1, warm=warm, warm_loo=warm_loo)


def torus_gap(x, y) -> np.ndarray:
    d = np.abs(np.asarray(x) - np.asarray(y)) % 1.0
    return np.sqrt(np.sum(np.minimum(d, 1.0 - d) ** 2, axis=-1))


def leave_one_out_gap(prob, N: int, steps: int, dt: float, seed: int = 0, mode: str = "ergodic") -> float:
    """Largest per-particle distance between paired full/leave-one-out runs.

    Both runs start from the same positions and share every noise increment.
    """
    a = ParticleEnsemble.from_density(prob.grid, prob.m0, N, prob.sigma, seed)
    b = replace(a)
    worst = 0.0
    for _ in range(steps):
        xi = a.increments()
        a = step_ensemble(a, prob, dt, mode, "full_empirical", noise=xi)
        b = step_ensemble(b, prob, dt, mode, "leave_one_out", noise=xi)
        worst = max(worst, float(torus_gap(a.positions, b.positions).max()))
    return worst


# -- propagation of chaos ---------------------------------------------------


@dataclass
class ChaosReport:
    N_list: list
    checkpoints: list
    replicas: int
    seed: int
    dt: float
    d1: np.ndarray
    d1_raw: np.ndarray
    binning_slack: float
    lambda_gap: np.ndarray
    u_gap: np.ndarray
    lambda_pde: np.ndarray
    exponents: dict = field(default_factory=dict)


def d1_to_density(grid: TorusGrid, samples, m) -> float:
    """``d_1`` between nearest-node binned samples and a grid density (1D)."""
    return d1_circle(EmpiricalMeasure.binned(grid, samples), EmpiricalMeasure.from_density(grid, m))


def run_chaos_experiment(prob, N_list, M_replicas: int, t_checkpoints, seed: int = 0, mode: str = "ergodic") -> ChaosReport:
    """Compare pooled particle laws with the PDE density at checkpoints.

    The PDE reference is the quasi-stationary evolution of ``prob`` with the
    same time step.  For each ``N`` and replica the ensemble starts from
    i.i.d. draws of ``m0``; at every checkpoint the positions are pooled over
    replicas, binned to the grid and compared with ``m(t)`` in ``d_1``
    (``h/2`` binning slack added), and ``|lambda[nu^N] - lambda[m(t)]|`` and
    ``||u[nu^N] - u[m(t)]||_inf`` are averaged over replicas.
    """
    from .mfg import evolve_quasi_stationary

    g = prob.grid
    if g.dim != 1:
        raise NotImplementedError("chaos experiment uses exact circle d_1 (1D only)")
    if M_replicas < 1 or any(N < 2 for N in N_list):
        raise ValueError("need N >= 2 and at least one replica")
    dt = prob.dt
    if dt is None:
        raise ValueError("chaos experiment needs an explicit dt")
    checkpoints = sorted(float(t) for t in t_checkpoints)
    T = max(checkpoints)
    ck_steps = [int(round(t / dt)) for t in checkpoints]
    pde = evolve_quasi_stationary(replace(prob, T=max(T, dt)), mode, store_every=1)
    m_ref = [pde.m_fields[k] for k in ck_steps]
    u_ref = [pde.u_fields[k] - np.mean(pde.u_fields[k]) for k in ck_steps]
    lam_ref = np.array([pde.lambdas[k] for k in ck_steps])
    nN, nt = len(N_list), len(checkpoints)
    d1_raw = np.zeros((nN, nt))
    lam_gap = np.zeros((nN, nt))
    u_gap = np.zeros((nN, nt))
    for a, N in enumerate(N_list):
        pooled = [[] for _ in checkpoints]
        for r in range(M_replicas):
            try:
                ens = ParticleEnsemble.from_density(g, prob.m0, N, prob.sigma, seed, r)
                for step in range(max(ck_steps) + 1):
                    if step in ck_steps:
                        j = ck_steps.index(step)
                        vp = _solve(prob, empirical_field(prob, ens.positions), mode, ens.warm)
                        ens.warm = vp
                        pooled[j].append(ens.positions[:, 0].copy())
                        lam_gap[a, j] += abs(vp.lam - lam_ref[j]) / M_replicas
                        u_gap[a, j] += float(np.abs(vp.shifted - u_ref[j]).max()) / M_replicas
                    if step < max(ck_steps):
                        ens = step_ensemble(ens, prob, dt, mode)
            except Exception as exc:
                raise RuntimeError(f"replica {r} (N={N}) failed: {exc}") from exc
        for j in range(nt):
            d1_raw[a, j] = d1_to_density(g, np.concatenate(pooled[j]), m_ref[j])
        log.info("N=%d done: d1=%s", N, d1_raw[a])
    slack = 0.5 * g.h
    exps = {}
    if nN >= 2:
        for j, t in enumerate(checkpoints):
            if np.all(d1_raw[:, j] > 0):
                exps[f"d1@t={t:g}"] = fit_power_law(N_list, d1_raw[:, j])[1]
            if np.all(lam_gap[:, j] > 0):
                exps[f"lambda@t={t:g}"] = fit_power_law(N_list, lam_gap[:, j])[1]
    return ChaosReport(list(N_list), checkpoints, M_replicas, seed, dt, d1_raw + slack, d1_raw, slack, lam_gap, u_gap, lam_ref, exps)


# -- ergodic cost along the fictitious dynamics -------------------------------


@dataclass
class ErgodicCostReport:
    lam: float
    time_average: float
    std_error: float
    bias_envelope: float
    tau: float
    paths: int
    ds: float

    @property
    def gap(self) -> float:
        return abs(self.time_average - self.lam)

    @property
    def tolerance(self) -> float:
        return 3.0 * (self.std_error + self.bias_envelope)

    @property
    def ok(self) -> bool:
        return self.gap <= self.tolerance


def verify_ergodic_cost(prob, frozen_density, tau: float, M_paths: int, seed: int = 0, ds: float = 2e-3) -> ErgodicCostReport:
    """Monte Carlo time average of ``L(a*) + F`` along the frozen-drift dynamics.

    With ``(lam, u)`` the ergodic solution against ``F(., m)``, the path
    ``dX = a*(X) ds + sqrt(2 s') dW`` with ``a* = -H_p(Du)`` satisfies
    ``(1/tau) int (L(a*) + F) ds = lam - (u(X_tau) - u(X_0)) / tau + martingale / tau``,
    so ``osc(u) / tau`` bounds the finite-horizon bias.  Each path's time
    average is one sample; the standard error is taken across paths.
    """
    g = prob.grid
    Ff = prob.F.eval_density(frozen_density)
    vp = solve_ergodic(prob.Hs, Ff, prob.sigma_p, prob.hjb)
    grad = g.gradient(vp.u)
    grad_s = [g.spline(grad[k]) for k in range(g.dim)]
    F_s = g.spline(Ff)
    X = sample_density(g, frozen_density, M_paths, philox(seed, 0, INIT_STREAM, M_paths))
    steps = int(round(tau / ds))
    total = np.zeros(M_paths)
    block = 1000
    scale = np.sqrt(2 * prob.sigma_p * ds)
    for start in range(0, steps, block):
        n = min(block, steps - start)
        xi = philox(seed, 0, FAST_STREAM, start).standard_normal((n, M_paths, g.dim))
        for k in range(n):
            p = np.stack([s(X) for s in grad_s])
            a = -prob.Hs.grad_p(None, p)
            total += (prob.Hs.lagrangian(None, a) + F_s(X)) * ds
            X = wrap(X + a.T * ds + scale * xi[k])
    avg = total / (steps * ds)
    se = float(avg.std(ddof=1) / np.sqrt(M_paths)) if M_paths > 1 else float("inf")
    osc = float(vp.u.max() - vp.u.min())
    return ErgodicCostReport(vp.lam, float(avg.mean()), se, osc / tau, tau, M_paths, ds)
