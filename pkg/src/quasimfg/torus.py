"""Uniform periodic grids on the unit torus and their finite-difference calculus.

Fields are plain numpy arrays of shape ``grid.shape``; vector fields carry the
component axis first, i.e. shape ``(grid.dim, *grid.shape)``.

Two difference pairs are provided:

* node-centred ``gradient`` / ``divergence`` (second-order central differences,
  exact negative adjoints of each other), used for ``Du`` in the HJB equations
  and for drift evaluation at particles;
* staggered ``face_gradient`` / ``face_divergence`` (forward differences onto
  the faces ``x + h e_k / 2`` and backward differences back to the nodes),
  whose composition is exactly the compact ``laplacian``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

__all__ = ["TorusGrid", "PeriodicSpline", "check_density", "normalize_density", "wrap"]


@dataclass(frozen=True)
class TorusGrid:
    """``n**dim`` nodes ``x_i = i h`` on the torus ``[0, 1)**dim``."""

    dim: int = 1
    n: int = 128

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        axis = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"))

    @cached_property
    def faces(self) -> np.ndarray:
        """Face-centre coordinates for each axis, shape ``(dim, dim, *shape)``.

        ``faces[k]`` holds the coordinates of the faces ``x_i + h e_k / 2``.
        """
        out = np.repeat(self.nodes[None], self.dim, axis=0)
        for k in range(self.dim):
            out[k, k] = (out[k, k] + 0.5 * self.h) % 1.0
        return out

    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, dim)`` array in C order."""
        return self.nodes.reshape(self.dim, -1).T.copy()

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def ones(self) -> np.ndarray:
        return np.ones(self.shape)

    def check_field(self, f, name="field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        return f

    # -- calculus -----------------------------------------------------------

    def mean(self, f) -> float:
        """Integral over the torus (periodic trapezoid rule)."""
        return float(np.mean(f))

    def gradient(self, f, stencil: str = "central") -> np.ndarray:
        """Node gradient of ``f``.

        ``stencil`` is ``"central"`` (default) or ``"forward"`` / ``"backward"``
        for one-sided stress tests.
        """
        f = np.asarray(f, dtype=float)
        out = np.empty((self.dim,) + f.shape)
        for k in range(self.dim):
            if stencil == "central":
                out[k] = (np.roll(f, -1, axis=k) - np.roll(f, 1, axis=k)) / (2 * self.h)
            elif stencil == "forward":
                out[k] = (np.roll(f, -1, axis=k) - f) / self.h
            elif stencil == "backward":
                out[k] = (f - np.roll(f, 1, axis=k)) / self.h
            else:
                raise ValueError(f"unknown stencil {stencil!r}")
        return out

    def divergence(self, g) -> np.ndarray:
        """Central divergence; the negative adjoint of the central gradient."""
        g = np.asarray(g, dtype=float)
        out = np.zeros(g.shape[1:])
        for k in range(self.dim):
            out += (np.roll(g[k], -1, axis=k) - np.roll(g[k], 1, axis=k)) / (2 * self.h)
        return out

    def face_gradient(self, f) -> np.ndarray:
        """Forward differences; component ``k`` lives on the faces ``x + h e_k/2``."""
        f = np.asarray(f, dtype=float)
        return np.stack([(np.roll(f, -1, axis=k) - f) / self.h for k in range(self.dim)])

    def face_divergence(self, g) -> np.ndarray:
        """Backward differences from faces to nodes (adjoint of ``-face_gradient``)."""
        g = np.asarray(g, dtype=float)
        out = np.zeros(g.shape[1:])
        for k in range(self.dim):
            out += (g[k] - np.roll(g[k], 1, axis=k)) / self.h
        return out

    def laplacian(self, f) -> np.ndarray:
        """Compact 3-point (1D) / 5-point (2D) periodic Laplacian."""
        f = np.asarray(f, dtype=float)
        out = np.zeros(f.shape)
        for k in range(self.dim):
            out += np.roll(f, -1, axis=k) - 2.0 * f + np.roll(f, 1, axis=k)
        return out / self.h**2

    def hessian(self, f) -> np.ndarray:
        """Second differences, shape ``(dim, dim, *shape)``."""
        f = np.asarray(f, dtype=float)
        out = np.empty((self.dim, self.dim) + f.shape)
        for k in range(self.dim):
            out[k, k] = (np.roll(f, -1, axis=k) - 2.0 * f + np.roll(f, 1, axis=k)) / self.h**2
            for j in range(k + 1, self.dim):
                gk = (np.roll(f, -1, axis=k) - np.roll(f, 1, axis=k)) / (2 * self.h)
                out[k, j] = out[j, k] = (
                    np.roll(gk, -1, axis=j) - np.roll(gk, 1, axis=j)
                ) / (2 * self.h)
        return out

    def interpolate(self, f, x) -> np.ndarray | float:
        """Periodic cubic-spline interpolation of node values at points ``x``.

        ``x`` is a single point (length ``dim``, or a scalar in 1D) or an
        array of shape ``(K, dim)`` (``(K,)`` accepted in 1D).
        """
        f = np.asarray(f, dtype=float)
        return self.spline(f)(x)

    def spline(self, f) -> "PeriodicSpline":
        return PeriodicSpline(self, np.asarray(f, dtype=float))

    # -- sparse operators ---------------------------------------------------

    def _shift_matrix(self, axis: int, offset: int) -> sp.csr_matrix:
        """Matrix ``S`` with ``(S f)[i] = f[i + offset e_axis]``."""
        idx = np.arange(self.size).reshape(self.shape)
        cols = np.roll(idx, -offset, axis=axis).ravel()
        return sp.csr_matrix(
            (np.ones(self.size), (np.arange(self.size), cols)), shape=(self.size, self.size)
        )

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        eye = sp.identity(self.size, format="csr")
        lap = sp.csr_matrix((self.size, self.size))
        for k in range(self.dim):
            lap = lap + self._shift_matrix(k, 1) - 2.0 * eye + self._shift_matrix(k, -1)
        return (lap / self.h**2).tocsr()

    @cached_property
    def gradient_matrices(self) -> tuple[sp.csr_matrix, ...]:
        """Central-difference matrices, one per axis."""
        return tuple(
            ((self._shift_matrix(k, 1) - self._shift_matrix(k, -1)) / (2 * self.h)).tocsr()
            for k in range(self.dim)
        )

    def shift_matrix(self, axis: int, offset: int) -> sp.csr_matrix:
        return self._shift_matrix(axis, offset)

    @staticmethod
    def wrap(x) -> np.ndarray:
        """Map coordinates into ``[0, 1)``."""
        return wrap(x)


class PeriodicSpline:
    """Interpolating periodic cubic B-spline of a grid field.

    The spline coefficients are computed once, so repeated evaluation (e.g.
    at particle positions every time step) costs only the local stencil.
    """

    def __init__(self, grid: TorusGrid, values: np.ndarray):
        self.grid = grid
        values = grid.check_field(values)
        self.coeffs = ndimage.spline_filter(values, order=3, mode="grid-wrap")

    def __call__(self, x):
        grid = self.grid
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0 or (grid.dim > 1 and x.ndim == 1)
        pts = x.reshape(-1, grid.dim)
        coords = (np.mod(pts, 1.0) * grid.n).T
        vals = ndimage.map_coordinates(
            self.coeffs, coords, order=3, mode="grid-wrap", prefilter=False
        )
        return float(vals[0]) if single else vals


def wrap(x) -> np.ndarray:
    """Map coordinates into ``[0, 1)`` (``np.mod`` alone can return 1.0)."""
    y = np.mod(x, 1.0)
    return np.where(y >= 1.0, 0.0, y)


def check_density(grid: TorusGrid, m, mass_tol: float = 1e-12, neg_tol: float = 1e-12) -> np.ndarray:
    """Validate a probability density on ``grid`` and return it as an array."""
    m = grid.check_field(m, "density")
    if not np.all(np.isfinite(m)):
        raise ValueError("density has non-finite entries")
    mass = grid.mean(m)
    if abs(mass - 1.0) > mass_tol:
        raise ValueError(f"density has mass {mass!r}, expected 1")
    if m.min() < -neg_tol:
        raise ValueError(f"density has negative entry {m.min()!r}")
    return m


def normalize_density(grid: TorusGrid, f) -> np.ndarray:
    """Rescale a nonnegative field to unit mass."""
    f = grid.check_field(f)
    if f.min() < 0:
        raise ValueError("cannot normalize a field with negative values")
    mass = grid.mean(f)
    if mass <= 0:
        raise ValueError("cannot normalize a field with zero mass")
    return f / mass
