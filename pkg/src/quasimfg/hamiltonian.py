"""Convex Hamiltonians ``H(x, p)`` with analytic derivatives and Legendre duals.

Momenta are arrays with the component axis first: ``p.shape == (d, ...)``.
Values broadcast over the trailing axes, so the same calls serve a single
vector and a whole grid of gradients.

Two families are built in, both independent of ``x``:

``quadratic``
    ``H = |p|^2 / 2``; the superlinear case of the exponential-convergence
    regime.
``soft_linear``
    ``H = kappa (sqrt(1 + |p|^2) - 1)``; grows linearly, so ``|H_p| <= kappa``.

A finite ``truncation`` radius replaces ``H`` outside the ball ``|p| <= R`` by
its first-order radial extension, which grows linearly.  This is how
superlinear Hamiltonians are reduced to the linear-growth setting once an a
priori gradient bound is known.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("quadratic", "soft_linear")


class DomainError(ValueError):
    """Raised when a control lies outside the effective domain of ``L``."""


def _as_vector(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[None] if p.ndim == 0 else p


@dataclass(frozen=True)
class HamiltonianSpec:
    kind: str = "quadratic"
    kappa: float = 1.0
    truncation: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "soft_linear" and not self.kappa > 0:
            raise ValueError("soft_linear Hamiltonian needs kappa > 0")
        if self.truncation is not None and not self.truncation > 0:
            raise ValueError("truncation radius must be positive")

    # -- radial profile ------------------------------------------------------
    # Both families are radial, H = g(|p|), so everything follows from g, g', g''.

    def _g(self, r):
        if self.kind == "quadratic":
            return 0.5 * r**2
        return self.kappa * (np.sqrt(1.0 + r**2) - 1.0)

    def _dg_over_r(self, r):
        # g'(r) / r, finite at r = 0
        if self.kind == "quadratic":
            return np.ones_like(r)
        return self.kappa / np.sqrt(1.0 + r**2)

    def _dg(self, r):
        return self._dg_over_r(r) * r

    def _d2g(self, r):
        if self.kind == "quadratic":
            return np.ones_like(r)
        return self.kappa / (1.0 + r**2) ** 1.5

    # -- public API ------------------------------------------------------------

    def value(self, x, p) -> np.ndarray:
        """``H(x, p)``; ``x`` is accepted for interface symmetry and ignored."""
        p = _as_vector(p)
        r = np.sqrt(np.sum(p**2, axis=0))
        R = self.truncation
        if R is None:
            return self._g(r)
        return np.where(r <= R, self._g(np.minimum(r, R)), self._g(R) + self._dg(R) * (r - R))

    def grad_p(self, x, p) -> np.ndarray:
        p = _as_vector(p)
        r = np.sqrt(np.sum(p**2, axis=0))
        R = self.truncation
        if R is None:
            return self._dg_over_r(r) * p
        rs = np.where(r > 0, r, 1.0)
        scale = np.where(r <= R, self._dg_over_r(np.minimum(r, R)), self._dg(R) / rs)
        return scale * p

    def hess_p(self, x, p) -> np.ndarray:
        """``H_pp``, shape ``(d, d, ...)``."""
        p = _as_vector(p)
        d = p.shape[0]
        r = np.sqrt(np.sum(p**2, axis=0))
        rs = np.where(r > 0, r, 1.0)
        e = p / rs
        outer = e[:, None] * e[None, :]
        eye = np.eye(d).reshape((d, d) + (1,) * (p.ndim - 1))
        # radial function: H_pp = g'' e e^T + (g'/r)(I - e e^T)
        d2 = self._d2g(r)
        d1r = self._dg_over_r(r)
        if self.truncation is not None:
            R = self.truncation
            outside = r > R
            d2 = np.where(outside, 0.0, d2)
            d1r = np.where(outside, self._dg(R) / rs, d1r)
        return d2 * outer + d1r * (eye - outer)

    def lagrangian(self, x, a) -> np.ndarray:
        """Legendre dual ``L(x, a) = sup_p { -p.a - H(x, p) }`` in closed form."""
        if self.truncation is not None:
            raise NotImplementedError("closed-form Lagrangian of a truncated Hamiltonian")
        a = _as_vector(a)
        s = np.sum(a**2, axis=0)
        if self.kind == "quadratic":
            return 0.5 * s
        k = self.kappa
        if np.any(s >= k**2):
            raise DomainError("control outside effective domain (|a| >= kappa)")
        return k - np.sqrt(k**2 - s)

    def optimal_control(self, x, p) -> np.ndarray:
        """Feedback ``a*(x, p) = -H_p(x, p)`` attaining the supremum in ``H``."""
        return -self.grad_p(x, p)

    def max_at_zero(self) -> float:
        """``sup_x |H(x, 0)|``; zero for both built-in families."""
        return 0.0


def quadratic() -> HamiltonianSpec:
    return HamiltonianSpec("quadratic")


def soft_linear(kappa: float) -> HamiltonianSpec:
    return HamiltonianSpec("soft_linear", kappa=kappa)
