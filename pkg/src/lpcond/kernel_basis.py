"""Kernels and polynomial bases.

Univariate bases are ``p(u) = (1, u, u^2/2!, ..., u^p/p!)``. Multivariate
bases use multi-indices ordered by total degree, then lexicographically
(descending) within a degree, so ``(1,0)`` precedes ``(0,1)``. The zero
multi-index is always first.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np

__all__ = [
    "KERNELS",
    "KernelSpec",
    "MultiIndexBasis",
    "basis_size",
    "kernel_eval",
    "poly_basis_1d",
    "poly_basis_multi",
    "product_kernel",
    "weighted_basis_1d",
    "weighted_basis_multi",
]

KERNELS = ("epanechnikov", "triangular", "uniform")


@dataclass(frozen=True)
class KernelSpec:
    """A compactly supported, symmetric kernel on [-1, 1].

    The uniform kernel is not Lipschitz at the endpoints; it is offered for
    exploration but the theory (and the acceptance checks) use the other two.
    """

    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in KERNELS:
            raise ValueError(f"unknown kernel {self.family!r}; choose from {KERNELS}")

    def __call__(self, u):
        return kernel_eval(self, u)


def _as_spec(spec) -> KernelSpec:
    return spec if isinstance(spec, KernelSpec) else KernelSpec(str(spec))


def kernel_eval(spec: KernelSpec | str, u):
    """Evaluate K(u); zero outside the closed interval [-1, 1]."""
    spec = _as_spec(spec)
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    inside = a <= 1.0
    if spec.family == "epanechnikov":
        val = 0.75 * (1.0 - u * u)
    elif spec.family == "triangular":
        val = 1.0 - a
    else:
        val = np.full_like(u, 0.5)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def product_kernel(spec: KernelSpec | str, u, d: int | None = None):
    """Product kernel L(u) = prod_k K(u_k).

    ``u`` has shape (d,) for one point or (m, d) for many.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = u.reshape(1)
    if d is not None and u.shape[-1] != d:
        raise ValueError(f"dimension mismatch: expected {d} coordinates, got {u.shape[-1]}")
    out = np.prod(np.asarray(kernel_eval(spec, u)), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def basis_size(d: int, q: int) -> int:
    """Number of multi-indices with total degree at most q in d dimensions."""
    if d < 1 or q < 0:
        raise ValueError("need d >= 1 and q >= 0")
    return comb(d + q, q)


@lru_cache(maxsize=None)
def _indices(d: int, q: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for deg in range(q + 1):
        level = [nu for nu in itertools.product(range(deg + 1), repeat=d) if sum(nu) == deg]
        out.extend(sorted(level, reverse=True))
    return tuple(out)


@dataclass(frozen=True)
class MultiIndexBasis:
    """Ordered multi-indices nu with |nu| <= q in d dimensions."""

    d: int
    q: int

    def __post_init__(self):
        if self.d < 1 or self.q < 0:
            raise ValueError("need d >= 1 and q >= 0")

    @property
    def indices(self) -> tuple[tuple[int, ...], ...]:
        return _indices(self.d, self.q)

    def __len__(self) -> int:
        return basis_size(self.d, self.q)

    def position(self, nu) -> int:
        """Position of multi-index ``nu`` in the ordering (the e_nu slot)."""
        nu = tuple(int(k) for k in np.atleast_1d(nu))
        if len(nu) != self.d:
            raise ValueError("multi-index has wrong dimension")
        try:
            return self.indices.index(nu)
        except ValueError:
            raise ValueError(f"multi-index {nu} has degree above {self.q}") from None

    def of_degree(self, k: int) -> list[tuple[int, ...]]:
        """All multi-indices of total degree exactly k (any k, not only <= q)."""
        return list(_indices(self.d, k)[basis_size(self.d, k - 1) if k > 0 else 0:])

    def unit(self, nu) -> np.ndarray:
        e = np.zeros(len(self))
        e[self.position(nu)] = 1.0
        return e


def poly_basis_1d(p: int, u):
    """p(u) with entry l equal to u^l / l!; shape (..., p+1)."""
    if p < 0:
        raise ValueError("order must be nonnegative")
    u = np.asarray(u, dtype=float)
    fact = np.array([factorial(k) for k in range(p + 1)], dtype=float)
    return _powers(u, p) / fact


def _powers(u: np.ndarray, top: int) -> np.ndarray:
    # u^0 .. u^top along a new last axis, by repeated multiplication
    out = np.empty(u.shape + (top + 1,))
    out[..., 0] = 1.0
    for k in range(1, top + 1):
        out[..., k] = out[..., k - 1] * u
    return out


def _monomials(indices, u):
    u = np.asarray(u, dtype=float)
    idx = np.asarray(indices, dtype=int).reshape(len(indices), -1)  # (B, d)
    fact = np.prod([[factorial(k) for k in nu] for nu in indices], axis=1).astype(float)
    pw = _powers(u, int(idx.max()) if idx.size else 0)  # (..., d, top+1)
    out = pw[..., 0, idx[:, 0]]
    for k in range(1, idx.shape[1]):
        out = out * pw[..., k, idx[:, k]]
    return out / fact


def poly_basis_multi(basis: MultiIndexBasis, u):
    """q(u) with entry for nu equal to u^nu / nu!; ``u`` shape (d,) or (m, d)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] != basis.d:
        raise ValueError(f"dimension mismatch: expected {basis.d} coordinates")
    return _monomials(basis.indices, u)


def weighted_basis_1d(spec: KernelSpec | str, p: int, u):
    """P(u) = p(u) K(u)."""
    return poly_basis_1d(p, u) * np.asarray(kernel_eval(spec, u))[..., None]


def weighted_basis_multi(spec: KernelSpec | str, basis: MultiIndexBasis, u):
    """Q(u) = q(u) L(u)."""
    u = np.asarray(u, dtype=float)
    w = np.prod(np.asarray(kernel_eval(spec, u)), axis=-1)
    return poly_basis_multi(basis, u) * np.asarray(w)[..., None]


def monomials(indices, u):
    """u^m / m! for an arbitrary list of multi-indices; shape (..., len(indices))."""
    return _monomials(list(indices), u)
