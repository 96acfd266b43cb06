"""Distances, norms and rate fits.

``d_1`` is the Kantorovich-Rubinstein (Wasserstein-1) distance with the
geodesic cost of the unit torus.  On the circle it is computed exactly from
cumulative distribution functions; in two dimensions a sliced surrogate is
provided, and a dense linear program serves as an independent oracle for
small instances.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.optimize import linprog

from .torus import TorusGrid, wrap

LP_MAX_SUPPORT = 64


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finite weighted sum of Dirac masses on the torus.

    ``points`` has shape ``(K, dim)``; ``weights`` are nonnegative and sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights differ in length")
        if pts.shape[0] == 0:
            raise ValueError("empty measure")
        if w.min() < 0:
            raise ValueError("negative weight")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", wrap(pts))
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_samples(cls, x) -> "EmpiricalMeasure":
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        return cls(x, np.full(n, 1.0 / n))

    @classmethod
    def from_density(cls, grid: TorusGrid, m) -> "EmpiricalMeasure":
        """Atoms at the grid nodes carrying mass ``m_i h^d``."""
        m = grid.check_field(m, "density")
        w = m.ravel() / grid.size
        return cls(grid.points(), w / w.sum())

    @classmethod
    def binned(cls, grid: TorusGrid, x) -> "EmpiricalMeasure":
        """Samples moved to their nearest grid node (error at most ``h/2`` per axis)."""
        x = np.asarray(x, dtype=float).reshape(-1, grid.dim)
        idx = np.rint(wrap(x) * grid.n).astype(int) % grid.n
        flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
        counts = np.bincount(flat, minlength=grid.size).astype(float)
        return cls(grid.points(), counts / counts.sum())


def _as_measure(mu) -> EmpiricalMeasure:
    if isinstance(mu, EmpiricalMeasure):
        return mu
    return EmpiricalMeasure.from_samples(mu)


def _circle_w1(x, a, y, b) -> float:
    """Exact circle-W1 between atoms ``(x, a)`` and ``(y, b)`` on ``[0, 1)``."""
    pts = np.concatenate([x, y])
    jumps = np.concatenate([a, -b])
    order = np.argsort(pts, kind="stable")
    pts, jumps = pts[order], jumps[order]
    # G(t) = mu[0, t] - nu[0, t] is piecewise constant between sorted atoms
    levels = np.cumsum(jumps)
    lengths = np.diff(np.append(pts, 1.0))
    # the arc [0, pts[0]) carries G = 0
    levels = np.append(levels, 0.0)
    lengths = np.append(lengths, pts[0])
    keep = lengths > 0
    levels, lengths = levels[keep], lengths[keep]
    if levels.size == 0:
        return 0.0
    # optimal offset: weighted median of G under arc length
    srt = np.argsort(levels, kind="stable")
    cum = np.cumsum(lengths[srt])
    c = levels[srt][np.searchsorted(cum, 0.5 * cum[-1])]
    return float(np.sum(lengths * np.abs(levels - c)))


def d1_circle(mu, nu) -> float:
    """Exact ``d_1`` on the unit circle.

    Uses ``W_1 = min_c int_0^1 |G(t) - c| dt`` with ``G`` the difference of
    the cumulative distribution functions; the minimizer is a weighted median.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("d1_circle needs measures on the 1D torus; use d1_sliced in 2D")
    return _circle_w1(mu.points[:, 0], mu.weights, nu.points[:, 0], nu.weights)


def d1_grid(grid: TorusGrid, m1, m2) -> float:
    """``d_1`` between two grid densities viewed as node atoms."""
    if grid.dim == 1:
        w1 = np.asarray(m1, dtype=float) / grid.size
        w2 = np.asarray(m2, dtype=float) / grid.size
        x = grid.nodes[0]
        return _circle_w1(x, w1 / w1.sum(), x, w2 / w2.sum())
    return d1_sliced(EmpiricalMeasure.from_density(grid, m1), EmpiricalMeasure.from_density(grid, m2))


def primitive_directions(count: int) -> np.ndarray:
    """The ``count`` shortest primitive integer vectors, one per line through 0."""
    out = []
    r = 1
    while len(out) < count:
        out = [
            (a, b)
            for a in range(0, r + 1)
            for b in range(-r, r + 1)
            if (a > 0 or b > 0) and gcd(a, abs(b)) == 1 and a * a + b * b <= r * r
        ]
        r += 1
    out.sort(key=lambda v: (v[0] ** 2 + v[1] ** 2, np.arctan2(v[1], v[0])))
    return np.array(out[:count], dtype=float)


def d1_sliced(mu, nu, directions: int = 16, seed: int = 0) -> float:
    """Sliced ``d_1`` surrogate on the 2D torus.

    Each slice projects onto ``x -> theta . x mod 1`` for a primitive integer
    vector ``theta``, which is a well-defined map onto the circle with
    Lipschitz constant ``|theta|``; slice distances are divided by ``|theta|``
    so that every term is a lower bound of the true ``d_1``.  Slices are
    averaged with weights ``|theta|^-4``: long directions see nearly uniform
    projections, and without the decay the average would drift towards zero
    as directions are added.  ``seed`` only permutes the order of summation
    and is kept for reproducibility records.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if directions < 8:
        raise ValueError("need at least 8 directions")
    if mu.dim != 2 or nu.dim != 2:
        raise ValueError("d1_sliced needs measures on the 2D torus")
    dirs = primitive_directions(directions)
    dirs = dirs[np.random.default_rng(seed).permutation(len(dirs))]
    total = weight = 0.0
    for th in dirs:
        norm = np.hypot(*th)
        px = wrap(mu.points @ th)
        py = wrap(nu.points @ th)
        total += _circle_w1(px, mu.weights, py, nu.weights) / norm**5
        weight += norm**-4
    return total / weight


def d1_lp_oracle(mu, nu) -> float:
    """``d_1`` by solving the transport linear program with geodesic cost."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    p, q = len(mu.weights), len(nu.weights)
    if p + q > LP_MAX_SUPPORT:
        raise ValueError(f"support too large for the LP oracle ({p + q} > {LP_MAX_SUPPORT})")
    diff = np.abs(mu.points[:, None, :] - nu.points[None, :, :])
    diff = np.minimum(diff, 1.0 - diff)
    cost = np.sqrt(np.sum(diff**2, axis=-1)).ravel()
    rows = np.zeros((p + q, p * q))
    for i in range(p):
        rows[i, i * q : (i + 1) * q] = 1.0
    for j in range(q):
        rows[p + j, j::q] = 1.0
    rhs = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost, A_eq=rows, b_eq=rhs, bounds=(0, None), method="highs-ds")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


# -- norms --------------------------------------------------------------------


def l2_norm(f) -> float:
    """``L^2`` norm on the unit torus (root mean square of node values)."""
    return float(np.sqrt(np.mean(np.square(f))))


def sup_norm(f) -> float:
    return float(np.max(np.abs(f)))


def c2_proxy(grid: TorusGrid, f) -> float:
    """``||f||_inf + ||Df||_inf + ||D^2 f||_inf`` with central differences."""
    return sup_norm(f) + sup_norm(grid.gradient(f)) + sup_norm(grid.hessian(f))


# -- rate fitting -------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialFit:
    """Least-squares fit ``value ~ A exp(-delta t)``; unpacks as ``(A, delta, r2)``."""

    A: float
    delta: float
    r2: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.A, self.delta, self.r2))


def fit_exponential(times, values) -> ExponentialFit:
    """Fit ``log values`` linearly in ``times``.

    A fit through constant data has no meaningful coefficient of
    determination; it is returned with ``r2 = nan`` and ``degenerate=True``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and values must be 1D arrays of equal length")
    if t.size < 4:
        raise ValueError("need at least 4 samples to fit an exponential")
    if np.any(~(y > 0)):
        raise ValueError("cannot fit exponential through zero/negative data")
    ly = np.log(y)
    slope, intercept = np.polyfit(t, ly, 1)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((ly - (slope * t + intercept)) ** 2))
    scale = max(1.0, float(np.max(np.abs(ly))))
    if ss_tot <= (1e-12 * scale) ** 2 * t.size:
        return ExponentialFit(float(np.exp(ly.mean())), 0.0, float("nan"), True)
    return ExponentialFit(float(np.exp(intercept)), float(-slope), 1.0 - ss_res / ss_tot)


def fit_power_law(x, y) -> tuple[float, float]:
    """Fit ``y ~ C x^(-alpha)``; returns ``(C, alpha)``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(np.exp(intercept)), float(-slope)
