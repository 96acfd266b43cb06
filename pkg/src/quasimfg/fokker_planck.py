"""Fokker-Planck equation ``dm/dt = s Lap m - div(m b)`` on the torus.

The density lives on nodes and the drift on faces.  Space is discretized as
a nearest-neighbour Markov generator with exponentially fitted rates

    i -> i + e_k :  (s / h^2) exp(+b h / (2 s))
    i + e_k -> i :  (s / h^2) exp(-b h / (2 s))

with ``b`` the face value between the two nodes.  Expanding the exponentials
shows this is the centred flux ``b (m_i + m_j) / 2 - s (m_j - m_i) / h`` up to
O(h^2) corrections.  Columns of the generator sum to zero, so mass is
conserved exactly, and all off-diagonal entries are positive, so backward
Euler preserves positivity for any step.  For a gradient drift
``b = -D^+ u`` the rates satisfy detailed balance with respect to
``exp(-u / s)``, which is then the exact discrete stationary density.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .hamiltonian import HamiltonianSpec
from .torus import TorusGrid

MASS_TOL = 1e-13
NEG_TOL = 1e-10
# relative mass error attributable to roundoff in the sparse solve
ROUNDOFF_MASS = 1e-10


class PositivityError(RuntimeError):
    """A density update undershot below ``-1e-10``; carries a suggested step."""

    def __init__(self, message, suggested_dt):
        super().__init__(f"{message}; try dt <= {suggested_dt:.3e}")
        self.suggested_dt = suggested_dt


class DegenerateProblemError(RuntimeError):
    pass


@dataclass(frozen=True)
class DriftField:
    """Drift on cell faces: ``values[k]`` sits at ``x_i + h e_k / 2``."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.dim,) + self.grid.shape:
            raise ValueError(f"drift has shape {v.shape}, expected {(self.grid.dim,) + self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("drift has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def sup(self) -> float:
        return float(np.abs(self.values).max())

    @classmethod
    def zero(cls, grid: TorusGrid) -> "DriftField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @classmethod
    def from_potential(cls, grid: TorusGrid, u, scale: float = 1.0) -> "DriftField":
        """``b = -scale * D^+ u`` on faces."""
        return cls(grid, -scale * grid.face_gradient(u))

    @classmethod
    def from_value(cls, Hs: HamiltonianSpec, u, grid: TorusGrid | None = None) -> "DriftField":
        """Optimal drift ``-H_p(x, Du)`` on faces.

        The normal component of ``Du`` is the forward difference across the
        face; tangential components average the central gradients of the two
        adjacent nodes.
        """
        from .hjb import grid_of

        grid = grid or grid_of(u)
        u = grid.check_field(u, "value function")
        central = grid.gradient(u)
        normal = grid.face_gradient(u)
        out = np.empty((grid.dim,) + grid.shape)
        for k in range(grid.dim):
            p = 0.5 * (central + np.roll(central, -1, axis=k + 1))
            p[k] = normal[k]
            out[k] = -Hs.grad_p(grid.faces[k], p)[k]
        return cls(grid, out)

    @classmethod
    def from_nodes(cls, grid: TorusGrid, b_nodes) -> "DriftField":
        """Average a node vector field onto faces."""
        b = np.asarray(b_nodes, dtype=float)
        return cls(grid, np.stack([0.5 * (b[k] + np.roll(b[k], -1, axis=k)) for k in range(grid.dim)]))

    def scaled(self, c: float) -> "DriftField":
        return DriftField(self.grid, c * self.values)


def default_dt(b: DriftField) -> float:
    return min(b.grid.h / (4.0 * (1.0 + b.sup)), 1e-3)


def _restore_mass(m_old, m_new):
    """Undo the roundoff-level mass change of a sparse solve.

    The generator conserves mass exactly, but in floating point the solve
    loses about ``eps * dt * max rate``.  Deviations above ``ROUNDOFF_MASS``
    are left alone so that genuine defects stay visible.
    """
    old, new = float(np.sum(m_old)), float(np.sum(m_new))
    if new > 0 and abs(new - old) <= ROUNDOFF_MASS * abs(old):
        return m_new * (old / new)
    return m_new


class FokkerPlanckOperator:
    """Discrete generator ``A`` with ``dm/dt = A m``; its transpose acts on test functions."""

    def __init__(self, b: DriftField, sigma: float):
        if not sigma > 0:
            raise ValueError("diffusion coefficient must be positive")
        self.b, self.sigma, self.grid = b, sigma, b.grid

    @cached_property
    def rates(self) -> tuple[np.ndarray, np.ndarray]:
        g, s = self.grid, self.sigma
        z = self.b.values * g.h / (2 * s)
        with np.errstate(over="ignore"):  # overflow is reported by stationary()
            return s / g.h**2 * np.exp(z), s / g.h**2 * np.exp(-z)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        g = self.grid
        N = g.size
        idx = np.arange(N).reshape(g.shape)
        fwd, bwd = self.rates
        rows, cols, vals = [], [], []
        for k in range(g.dim):
            i = idx.ravel()
            j = np.roll(idx, -1, axis=k).ravel()
            # mass moves i -> j at rate fwd and j -> i at rate bwd
            rows += [j, i]
            cols += [i, j]
            vals += [fwd[k].ravel(), bwd[k].ravel()]
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        off = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        # diagonal = minus the column sums, so every column sums to zero
        diag = -np.asarray(off.sum(axis=0)).ravel()
        return (off + sp.diags(diag)).tocsr()

    def apply(self, m) -> np.ndarray:
        return (self.matrix @ np.asarray(m, dtype=float).ravel()).reshape(self.grid.shape)

    def adjoint(self, f) -> np.ndarray:
        """``A^T f``, the backward (Kolmogorov) operator ``s Lap f + b . Df``."""
        return (self.matrix.T @ np.asarray(f, dtype=float).ravel()).reshape(self.grid.shape)

    def step(self, m, dt: float) -> np.ndarray:
        """One backward-Euler step ``(I - dt A) m_new = m``."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        g = self.grid
        m = np.asarray(m, dtype=float)
        M = (sp.identity(g.size, format="csc") - dt * self.matrix).tocsc()
        out = _restore_mass(m, splu(M).solve(m.ravel()).reshape(g.shape))
        if out.min() < -NEG_TOL:
            raise PositivityError(f"density undershoot {out.min():.3e}", 0.5 * min(dt, default_dt(self.b)))
        return out

    def stationary(self) -> np.ndarray:
        g = self.grid
        fwd, bwd = self.rates
        if not (np.all(np.isfinite(fwd)) and np.all(np.isfinite(bwd)) and fwd.min() > 0 and bwd.min() > 0):
            raise DegenerateProblemError("degenerate stationary problem (vanishing or overflowing rates)")
        A = self.matrix.tolil()
        A[g.size - 1, :] = np.full(g.size, 1.0 / g.size)
        rhs = np.zeros(g.size)
        rhs[-1] = 1.0
        m = splu(A.tocsc()).solve(rhs).reshape(g.shape)
        if not np.all(np.isfinite(m)) or m.min() < -NEG_TOL:
            raise DegenerateProblemError("degenerate stationary problem")
        res = self.relative_residual(m)
        if res > 1e-11:
            raise DegenerateProblemError(f"degenerate stationary problem (relative residual {res:.2e})")
        return m

    def relative_residual(self, m) -> float:
        """``||A m||_inf / (max rate * ||m||_inf)``."""
        scale = float(np.abs(self.matrix.diagonal()).max()) * float(np.abs(m).max())
        return float(np.abs(self.apply(m)).max()) / scale


def step(m, b: DriftField, sigma: float, dt: float | None = None) -> np.ndarray:
    """Advance a density by one step; ``dt`` defaults to :func:`default_dt`."""
    return FokkerPlanckOperator(b, sigma).step(m, default_dt(b) if dt is None else dt)


def solve_stationary(b: DriftField, sigma: float) -> np.ndarray:
    """Unit-mass null vector of the discrete generator."""
    return FokkerPlanckOperator(b, sigma).stationary()


def evolve(m0, b: DriftField, sigma: float, T: float, dt: float, store_every: int = 1):
    """Fixed-drift evolution; returns ``(times, densities)`` at stored steps."""
    op = FokkerPlanckOperator(b, sigma)
    g = b.grid
    M = (sp.identity(g.size, format="csc") - dt * op.matrix).tocsc()
    lu = splu(M)
    steps = int(round(T / dt))
    m = np.asarray(m0, dtype=float).copy()
    times, out = [0.0], [m.copy()]
    for k in range(1, steps + 1):
        m = _restore_mass(m, lu.solve(m.ravel()).reshape(g.shape))
        if k % store_every == 0 or k == steps:
            times.append(k * dt)
            out.append(m.copy())
    return np.array(times), out


@dataclass
class HolderReport:
    max_ratio: float
    worst_pair: tuple[float, float] | None
    pairs: int
    b_sup: float

    @property
    def C_T(self) -> float:
        return self.max_ratio


def check_holder_half(trajectory, b_sup: float, sigma: float, grid: TorusGrid | None = None) -> HolderReport:
    """Largest ``d_1(m(t), m(s)) / ((1 + b_sup) |t - s|^(1/2))`` over stored pairs."""
    from .hjb import grid_of
    from .metrics import d1_grid

    traj = list(trajectory)
    if len(traj) < 3:
        raise ValueError("need at least 3 time samples")
    grid = grid or grid_of(traj[0][1])
    best, worst, pairs = 0.0, None, 0
    for a in range(len(traj)):
        for c in range(a + 1, len(traj)):
            (t, mt), (s, ms) = traj[a], traj[c]
            if t == s:
                continue
            pairs += 1
            r = d1_grid(grid, mt, ms) / ((1.0 + b_sup) * abs(t - s) ** 0.5)
            if r > best:
                best, worst = r, (t, s)
    if not np.isfinite(best):
        raise ValueError("non-finite Holder ratio")
    return HolderReport(best, worst, pairs, b_sup)


def mass_drift(grid: TorusGrid, m_old, m_new) -> float:
    return abs(grid.mean(m_new) - grid.mean(m_old))


__all__ = [
    "DriftField",
    "FokkerPlanckOperator",
    "PositivityError",
    "DegenerateProblemError",
    "default_dt",
    "step",
    "solve_stationary",
    "evolve",
    "check_holder_half",
]
