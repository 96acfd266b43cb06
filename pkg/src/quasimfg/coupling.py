"""Nonlocal, monotone coupling ``F(x, m) = V(x) + c_F (phi * phi * m)(x)``.

``phi`` is a periodized C-infinity bump of radius ``eps`` normalized to unit
integral, and ``psi = phi * phi`` is tabulated once on the grid by a discrete
periodic convolution.  Because ``F`` is a convolution it can be evaluated on an
empirical measure without any density estimate: the kernel is evaluated off
the grid through the trigonometric interpolant of its table.

The optional potential ``V`` (zero by default) leaves monotonicity and the
``d_1``-Lipschitz bound untouched; it is what makes equilibria non-uniform,
since a translation-invariant coupling with an ``x``-independent Hamiltonian
always has the uniform density as its equilibrium.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .torus import TorusGrid, check_density


def bump_profile(r, eps):
    """Unnormalized ``exp(-1 / (1 - (r/eps)^2))`` on ``r < eps``, zero outside."""
    r = np.asarray(r, dtype=float)
    s = (r / eps) ** 2
    out = np.zeros_like(r)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


def torus_distance(x, y=0.0) -> np.ndarray:
    """Geodesic distance on the unit torus; the last axis holds coordinates."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d**2, axis=-1))


@dataclass(frozen=True)
class MollifierKernel:
    grid: TorusGrid
    eps: float = 0.15

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ValueError(f"bandwidth must lie in (0, 0.5), got {self.eps}")
        if self.eps < 2 * self.grid.h:
            raise ValueError("bandwidth is not resolved by the grid (eps < 2h)")

    @cached_property
    def samples(self) -> np.ndarray:
        pts = np.moveaxis(self.grid.nodes, 0, -1)
        phi = bump_profile(torus_distance(pts), self.eps)
        return phi / self.grid.mean(phi)

    @cached_property
    def fourier(self) -> np.ndarray:
        """Unnormalized DFT of the samples (``numpy.fft`` convention)."""
        return np.fft.fftn(self.samples)

    def convolve(self, f) -> np.ndarray:
        """``(phi * f)(x_i) = h^d sum_j phi(x_i - x_j) f_j``."""
        g = self.grid
        return np.real(np.fft.ifftn(self.fourier * np.fft.fftn(f))) * g.h**g.dim


@dataclass(frozen=True)
class CouplingOperator:
    kernel: MollifierKernel
    strength: float = 1.0
    potential: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("coupling strength must be nonnegative")
        if self.potential is not None:
            object.__setattr__(self, "potential", self.grid.check_field(self.potential, "potential"))

    @classmethod
    def bump(cls, grid: TorusGrid, eps: float = 0.15, strength: float = 1.0, potential=None):
        return cls(MollifierKernel(grid, eps), strength, potential)

    @property
    def grid(self) -> TorusGrid:
        return self.kernel.grid

    @cached_property
    def psi(self) -> np.ndarray:
        """Grid table of ``phi * phi``: even, nonnegative, unit mean."""
        # clip FFT roundoff so the table is nonnegative exactly
        return np.maximum(self.kernel.convolve(self.kernel.samples), 0.0)

    @cached_property
    def _psi_hat(self) -> np.ndarray:
        # coefficients of the trigonometric interpolant of the psi table
        return np.fft.fftn(self.psi) / self.grid.size

    @cached_property
    def _psi_fft(self) -> np.ndarray:
        return np.fft.fftn(self.psi)

    def _base(self) -> np.ndarray:
        return self.grid.zeros() if self.potential is None else self.potential.copy()

    def eval_density(self, m) -> np.ndarray:
        """``F(., m)`` on the grid for a grid density ``m``."""
        g = self.grid
        m = g.check_field(m, "density")
        conv = np.real(np.fft.ifftn(self._psi_fft * np.fft.fftn(m))) * g.h**g.dim
        return self._base() + self.strength * conv

    def empirical_modes(self, positions) -> np.ndarray:
        """``(1/N) sum_j exp(-2 pi i k . X_j)`` for every grid wavenumber ``k``."""
        g = self.grid
        X = np.asarray(positions, dtype=float).reshape(-1, g.dim)
        if X.shape[0] == 0:
            raise ValueError("empty ensemble")
        # sum in a canonical order so the result is bitwise invariant under
        # relabelling of the particles
        X = X[np.lexsort(X.T[::-1])]
        if g.dim == 1:
            return self._modes_1d(X[:, 0])
        k = np.fft.fftfreq(g.n, d=1.0 / g.n)
        out = None
        for axis in range(g.dim):
            # (N, n) factor for this axis, broadcast into the tensor product
            fac = np.exp(-2j * np.pi * np.outer(X[:, axis], k))
            shape = [X.shape[0]] + [1] * g.dim
            shape[axis + 1] = g.n
            fac = fac.reshape(shape)
            out = fac if out is None else out * fac
        return out.mean(axis=0)

    def _modes_1d(self, x) -> np.ndarray:
        # powers z^k of z = exp(-2 pi i x) by cumulative products
        n = self.grid.n
        z = np.exp(-2j * np.pi * x)
        powers = np.empty((x.size, n // 2 + 1), dtype=complex)
        powers[:, 0] = 1.0
        powers[:, 1:] = z[:, None]
        np.cumprod(powers, axis=1, out=powers)
        pos = powers.mean(axis=0)
        out = np.empty(n, dtype=complex)
        out[: n // 2] = pos[: n // 2]
        out[n // 2 :] = np.conj(pos[n // 2 : 0 : -1])
        return out

    def eval_empirical(self, positions) -> np.ndarray:
        """``F(x_i, nu)`` with ``nu = (1/N) sum_j delta_{X_j}``, exact up to kernel interpolation."""
        return self.eval_modes(self.empirical_modes(positions))

    def eval_modes(self, modes) -> np.ndarray:
        """``F`` for a measure given by its Fourier modes ``int exp(-2 pi i k.x) dnu``."""
        conv = np.real(np.fft.ifftn(self._psi_hat * modes)) * self.grid.size
        return self._base() + self.strength * conv

    def psi_at(self, z) -> np.ndarray:
        """Kernel ``psi`` at arbitrary offsets ``z`` (shape ``(K, d)``), by direct mode summation."""
        g = self.grid
        z = np.asarray(z, dtype=float).reshape(-1, g.dim)
        k = np.fft.fftfreq(g.n, d=1.0 / g.n)
        grids = np.meshgrid(*([k] * g.dim), indexing="ij")
        phase = sum(np.multiply.outer(z[:, a], grids[a]) for a in range(g.dim))
        return np.real(np.sum(self._psi_hat * np.exp(2j * np.pi * phase), axis=tuple(range(1, g.dim + 1))))

    # -- structural properties --------------------------------------------

    def check_monotonicity(self, m1, m2) -> float:
        """``int (F(x, m1) - F(x, m2)) d(m1 - m2)``; nonnegative for this coupling."""
        g = self.grid
        m1 = check_density(g, m1, mass_tol=1e-10)
        m2 = check_density(g, m2, mass_tol=1e-10)
        return g.mean((self.eval_density(m1) - self.eval_density(m2)) * (m1 - m2))

    def monotonicity_identity(self, m1, m2) -> float:
        """``c_F ||phi * (m1 - m2)||_2^2``, the closed form of the monotonicity integral."""
        diff = self.kernel.convolve(np.asarray(m1) - np.asarray(m2))
        return self.strength * self.grid.mean(diff**2)

    @cached_property
    def psi_sup(self) -> float:
        return float(self.psi.max())

    @cached_property
    def psi_lipschitz(self) -> float:
        """Upper bound for the Lipschitz constant of the kernel ``psi``.

        Takes the larger of the sup of the interpolant's derivative (sampled
        on an 8x refined grid) and the largest difference quotient between
        neighbouring nodes; the latter is what controls grid evaluations.
        """
        g = self.grid
        grads = []
        for axis in range(g.dim):
            diffs = np.abs(np.roll(self.psi, -1, axis=axis) - self.psi) / g.h
            grads.append(diffs.max())
        fine = 8 * g.n
        k = np.fft.fftfreq(g.n, d=1.0 / g.n)
        if g.dim == 1:
            coef = self._psi_hat.copy()
            pad = np.zeros(fine, dtype=complex)
            pad[: g.n // 2] = coef[: g.n // 2]
            pad[-g.n // 2 :] = coef[-g.n // 2 :]
            kf = np.fft.fftfreq(fine, d=1.0 / fine)
            deriv = np.real(np.fft.ifft(2j * np.pi * kf * pad)) * fine
            grads.append(np.abs(deriv).max())
        else:
            for axis in range(g.dim):
                kk = np.meshgrid(*([k] * g.dim), indexing="ij")[axis]
                deriv = np.real(np.fft.ifftn(2j * np.pi * kk * self._psi_hat)) * g.size
                grads.append(np.abs(deriv).max())
        return float(max(grads))

    @property
    def lipschitz_bound(self) -> float:
        """Analytic ``kappa_F``: ``||F(., m) - F(., m')||_inf <= kappa_F d_1(m, m')``."""
        return self.strength * self.psi_lipschitz

    @property
    def sup_bound(self) -> float:
        """``sup_m ||F(., m)||_inf``."""
        v = 0.0 if self.potential is None else float(np.abs(self.potential).max())
        return v + self.strength * self.psi_sup

    def field_lipschitz(self, f) -> float:
        """Largest neighbour difference quotient of a grid field."""
        g = self.grid
        return float(max(np.abs(np.roll(f, -1, axis=a) - f).max() / g.h for a in range(g.dim)))


@dataclass
class LipschitzEstimate:
    estimate: float
    analytic_bound: float
    trials: int
    worst_pair: tuple | None = None


def random_density(grid: TorusGrid, rng: np.random.Generator, modes: int = 4, floor: float = 0.05):
    """Smooth positive density built from a few random low Fourier modes."""
    x = grid.nodes
    f = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(1, 4, size=grid.dim)
        phase = rng.uniform(0, 1)
        f += rng.normal() * np.cos(2 * np.pi * (np.tensordot(k, x, axes=1) + phase))
    f = f - f.min() + floor
    return f / grid.mean(f)


def double_well(grid: TorusGrid, depth: float) -> np.ndarray:
    """Potential ``depth * cos(4 pi x_1)`` with wells at ``x_1 = 1/4`` and ``3/4``."""
    return depth * np.cos(4 * np.pi * grid.nodes[0])


def bump_density(grid: TorusGrid, center, width: float) -> np.ndarray:
    """Periodized Gaussian bump, normalized to unit mass."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    pts = np.moveaxis(grid.nodes, 0, -1)
    d = torus_distance(pts, c)
    f = np.exp(-0.5 * (d / width) ** 2)
    return f / grid.mean(f)


def estimate_d1_lipschitz(F: CouplingOperator, trials: int, rng_seed: int) -> LipschitzEstimate:
    """Largest sampled ``||F(., m) - F(., m')||_inf / d_1(m, m')``.

    Pairs alternate between independent random smooth densities and a bump
    with a translated copy of itself; identical pairs are skipped.
    """
    from .metrics import d1_grid

    if trials < 1:
        raise ValueError("trials must be >= 1")
    g = F.grid
    if g.dim != 1:
        raise NotImplementedError("exact d_1 is only available on the circle")
    rng = np.random.default_rng(rng_seed)
    best, worst = 0.0, None
    for t in range(trials):
        if t % 2 == 0:
            m1, m2 = random_density(g, rng), random_density(g, rng)
        else:
            c = rng.uniform(0, 1)
            w = rng.uniform(0.03, 0.2)
            shift = rng.uniform(g.h, 0.25)
            m1, m2 = bump_density(g, c, w), bump_density(g, c + shift, w)
        dist = d1_grid(g, m1, m2)
        if dist <= 0:
            continue
        ratio = float(np.abs(F.eval_density(m1) - F.eval_density(m2)).max()) / dist
        if ratio > best:
            best, worst = ratio, (m1, m2)
    return LipschitzEstimate(best, F.lipschitz_bound, trials, worst)
