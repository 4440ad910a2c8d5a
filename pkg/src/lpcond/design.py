"""Design matrices at an evaluation point.

Empirical pieces (``s_hat_*``, ``r_hat``, ``c_hat_*``, ``t_hat_*``) are sample
averages of kernel-weighted polynomial bases. Integrated pieces replace the
sample average with Gauss-Legendre quadrature against model densities over
the truncated, standardized window; that truncation is what makes the
estimator boundary adaptive.

Normalization follows the general derivative target (mu, nu):
``R = (n^2 h^(1+d+mu+|nu|))^-1 sum_i sum_j 1(y_i <= y_j) P(u_j) Q(v_i)^T``
with ``u = (y - y0)/h`` and ``v = (x - x0)/h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .kernel_basis import (
    KernelSpec,
    MultiIndexBasis,
    kernel_eval,
    monomials,
    poly_basis_1d,
    poly_basis_multi,
)

__all__ = [
    "DegenerateDesign",
    "DesignSystem",
    "EstimatorConfig",
    "EvalPoint",
    "IntegratedMatrices",
    "Sample",
    "SupportModel",
    "as_grid",
    "c_hat_x",
    "c_hat_y",
    "design_system",
    "integrated_matrices",
    "r_bar",
    "r_hat",
    "s_hat_x",
    "s_hat_y",
    "solve_design",
    "t_hat_x",
    "t_hat_yy",
    "ties_in_y",
]

RCOND_MIN = 1e-12
GL_NODES = 50
MAX_INTEGRATED_DIM = 3


class DegenerateDesign(ArithmeticError):
    """A kernel window is (numerically) empty or its design matrix is singular."""

    def __init__(self, msg: str, rcond: float = 0.0, n_eff: int | None = None):
        super().__init__(msg)
        self.rcond = rcond
        self.n_eff = n_eff


class Sample:
    """Observations (y_i, x_i) with the y-sort permutation cached."""

    def __init__(self, y, x):
        y = np.asarray(y, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError("x must have one row per observation")
        if y.size < 1:
            raise ValueError("empty sample")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("sample contains non-finite values")
        self.y = y
        self.x = x
        self.sort_perm = np.argsort(y, kind="stable")
        self.y_sorted = y[self.sort_perm]
        # rank_le[i] = #{k: y_k <= y_i}, rank_lt[i] = #{k: y_k < y_i}
        self.rank_le = np.searchsorted(self.y_sorted, y, side="right")
        self.rank_lt = np.searchsorted(self.y_sorted, y, side="left")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Sample":
        return Sample(self.y[idx], self.x[idx])

    def prefix_le(self, w: np.ndarray) -> np.ndarray:
        """For each j, sum of w_i over i with y_i <= y_j (ties included).

        ``w`` may have shape (n,) or (G, n); the sum runs over the last axis.
        """
        w = np.asarray(w)
        ws = np.take(w, self.sort_perm, axis=-1)
        cum = np.concatenate([np.zeros(ws.shape[:-1] + (1,)), np.cumsum(ws, axis=-1)], axis=-1)
        return np.take(cum, self.rank_le, axis=-1)

    def suffix_ge(self, w: np.ndarray) -> np.ndarray:
        """For each i, sum of w_j over j with y_j >= y_i (ties included)."""
        w = np.asarray(w)
        ws = np.take(w, self.sort_perm, axis=-1)
        cum = np.concatenate([np.zeros(ws.shape[:-1] + (1,)), np.cumsum(ws, axis=-1)], axis=-1)
        total = cum[..., -1:]
        return total - np.take(cum, self.rank_lt, axis=-1)


@dataclass(frozen=True)
class EvalPoint:
    y: float
    x: tuple

    def __init__(self, y, x):
        object.__setattr__(self, "y", float(y))
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(x)))
        if not (np.isfinite(self.y) and all(np.isfinite(self.x))):
            raise ValueError("evaluation point must be finite")

    @property
    def xa(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)


@dataclass(frozen=True)
class EstimatorConfig:
    """Polynomial orders, derivative target and bandwidth.

    ``q`` defaults to ``p - mu`` (the density case mu = 1 + theta gives
    q = p - theta - 1). ``nu`` defaults to the zero multi-index.
    """

    p: int = 2
    q: int | None = None
    mu: int = 1
    nu: tuple | None = None
    h: float | None = None
    kernel: KernelSpec | str = "epanechnikov"
    weighting: str = "empirical"
    q_auto: bool | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.kernel, KernelSpec):
            object.__setattr__(self, "kernel", KernelSpec(str(self.kernel)))
        if self.q_auto is None:
            object.__setattr__(self, "q_auto", self.q is None)
        if self.q_auto:
            object.__setattr__(self, "q", self.p - self.mu)
        if self.nu is not None:
            object.__setattr__(self, "nu", tuple(int(k) for k in self.nu))
        if self.p < 0 or self.q < 0:
            raise ValueError("polynomial orders must be nonnegative")
        if not 0 <= self.mu <= self.p:
            raise ValueError(f"need 0 <= mu <= p, got mu={self.mu}, p={self.p}")
        if self.nu is not None and (min(self.nu) < 0 or sum(self.nu) > self.q):
            raise ValueError("need |nu| <= q with nonnegative entries")
        if self.h is not None and not self.h > 0:
            raise ValueError("bandwidth must be positive")
        if self.weighting not in ("empirical", "integrated"):
            raise ValueError("weighting must be 'empirical' or 'integrated'")

    def nu_for(self, d: int) -> tuple:
        nu = self.nu if self.nu is not None else (0,) * d
        if len(nu) != d:
            raise ValueError(f"nu has {len(nu)} entries but the data has d={d}")
        return nu

    def with_(self, **kw) -> "EstimatorConfig":
        """Copy with fields replaced; an automatic q follows new p or mu."""
        if "q" in kw:
            kw["q_auto"] = kw["q"] is None
        return replace(self, **kw)

    def require_h(self) -> float:
        if self.h is None:
            raise ValueError("bandwidth h is not set")
        return float(self.h)


@dataclass
class SupportModel:
    """Support box and weighting densities for the integrated matrices.

    Densities are callables on original-scale points; ``y_density`` takes an
    array of y values, ``x_density`` an (m, d) array. Missing densities mean
    uniform on the box. If ``y_atoms`` (or ``x_atoms``) is set, the
    corresponding measure is the empirical distribution of those atoms and
    the quadrature is replaced by an average.
    """

    y_support: tuple
    x_support: np.ndarray
    y_density: Callable | None = None
    x_density: Callable | None = None
    y_atoms: np.ndarray | None = None
    x_atoms: np.ndarray | None = None

    def __post_init__(self):
        lo, hi = (float(v) for v in self.y_support)
        if not lo < hi:
            raise ValueError("y support must have y_lo < y_hi")
        self.y_support = (lo, hi)
        xs = np.atleast_2d(np.asarray(self.x_support, dtype=float))
        if xs.shape[1] != 2 or np.any(xs[:, 0] >= xs[:, 1]):
            raise ValueError("x support must be a nondegenerate box of (lo, hi) rows")
        self.x_support = xs

    @property
    def d(self) -> int:
        return self.x_support.shape[0]

    @classmethod
    def from_sample(cls, sample: Sample, y_density=None, x_density=None) -> "SupportModel":
        """Support set to the sample range (the estimator itself needs no support)."""
        xs = np.column_stack([sample.x.min(axis=0), sample.x.max(axis=0)])
        return cls((sample.y.min(), sample.y.max()), xs, y_density, x_density)

    @classmethod
    def empirical(cls, sample: Sample, x_too: bool = True) -> "SupportModel":
        """Weighting measure equal to the empirical distribution of the sample."""
        m = cls.from_sample(sample)
        m.y_atoms = sample.y.copy()
        if x_too:
            m.x_atoms = sample.x.copy()
        return m

    def g(self, y):
        if self.y_density is None:
            lo, hi = self.y_support
            return np.full(np.shape(y), 1.0 / (hi - lo))
        return np.asarray(self.y_density(y), dtype=float)

    def fx(self, pts):
        if self.x_density is None:
            vol = float(np.prod(self.x_support[:, 1] - self.x_support[:, 0]))
            return np.full(pts.shape[0], 1.0 / vol)
        return np.asarray(self.x_density(pts), dtype=float)


def as_grid(grid) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a grid into (ys of shape (G,), xs of shape (G, d))."""
    if isinstance(grid, EvalPoint):
        grid = [grid]
    if isinstance(grid, tuple) and len(grid) == 2 and not isinstance(grid[0], EvalPoint):
        ys = np.atleast_1d(np.asarray(grid[0], dtype=float))
        xs = np.asarray(grid[1], dtype=float)
        if xs.ndim == 1:
            xs = np.broadcast_to(xs, (ys.size, xs.size)) if xs.size != ys.size else xs[:, None]
        return ys, np.array(xs, dtype=float)
    pts = list(grid)
    if not pts:
        raise ValueError("empty grid")
    ys = np.array([g.y for g in pts])
    xs = np.array([g.x for g in pts], dtype=float)
    return ys, xs


# ---------------------------------------------------------------------------
# linear algebra


def rcond(M: np.ndarray) -> float:
    """Reciprocal 2-norm condition number (0 for a zero or non-finite matrix)."""
    M = np.asarray(M, dtype=float)
    if M.size == 0 or not np.all(np.isfinite(M)):
        return 0.0
    s = np.linalg.svd(M, compute_uv=False)
    return 0.0 if s[0] == 0 else float(s[-1] / s[0])


def solve_design(M, rhs, n_eff: int | None = None, min_count: int | None = None):
    """Solve M z = rhs by pivoted LU; return (z, reciprocal condition).

    Raises DegenerateDesign when the reciprocal condition is below 1e-12 or
    when fewer than ``min_count`` (default: the matrix size) observations
    carry kernel weight.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("design matrix must be square")
    need = M.shape[0] if min_count is None else min_count
    if n_eff is not None and n_eff < need:
        raise DegenerateDesign(
            f"only {n_eff} observations in the kernel window, need {need}", 0.0, n_eff
        )
    rc = rcond(M)
    if rc < RCOND_MIN:
        raise DegenerateDesign(f"singular design (rcond={rc:.3g})", rc, n_eff)
    z = scipy.linalg.lu_solve(scipy.linalg.lu_factor(M, check_finite=False), rhs, check_finite=False)
    return z, rc


# ---------------------------------------------------------------------------
# empirical pieces


def _yparts(sample: Sample, y0: float, cfg: EstimatorConfig, order: int | None = None):
    h = cfg.require_h()
    p = cfg.p if order is None else order
    u = (sample.y - y0) / h
    k = np.asarray(kernel_eval(cfg.kernel, u))
    return u, k, poly_basis_1d(p, u)


def _xparts(sample: Sample, x0, cfg: EstimatorConfig, q: int | None = None):
    h = cfg.require_h()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != sample.d:
        raise ValueError(f"evaluation x has {x0.size} coordinates, sample has d={sample.d}")
    basis = MultiIndexBasis(sample.d, cfg.q if q is None else q)
    v = (sample.x - x0) / h
    L = np.prod(np.asarray(kernel_eval(cfg.kernel, v)).reshape(v.shape), axis=1)
    return v, L, basis, poly_basis_multi(basis, v)


def s_hat_y(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> np.ndarray:
    """(nh)^-1 sum_i p(u_i) P(u_i)^T."""
    h = config.require_h()
    _, k, pb = _yparts(sample, ev.y, config)
    return (pb * k[:, None]).T @ pb / (sample.n * h)


def s_hat_x(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> np.ndarray:
    """(nh^d)^-1 sum_i q(v_i) Q(v_i)^T."""
    h = config.require_h()
    _, L, _, qb = _xparts(sample, ev.xa, config)
    return (qb * L[:, None]).T @ qb / (sample.n * h**sample.d)


def c_hat_y(sample: Sample, ev: EvalPoint, config: EstimatorConfig, ell: int) -> np.ndarray:
    """(nh)^-1 sum_i (u_i^l / l!) P(u_i)."""
    h = config.require_h()
    u, k, pb = _yparts(sample, ev.y, config)
    return (pb * (k * u**ell / factorial(ell))[:, None]).sum(axis=0) / (sample.n * h)


def c_hat_x(sample: Sample, ev: EvalPoint, config: EstimatorConfig, m) -> np.ndarray:
    """(nh^d)^-1 sum_i (v_i^m / m!) Q(v_i)."""
    h = config.require_h()
    v, L, _, qb = _xparts(sample, ev.xa, config)
    mono = monomials([tuple(m)], v)[:, 0]
    return (qb * (L * mono)[:, None]).sum(axis=0) / (sample.n * h**sample.d)


def t_hat_x(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> np.ndarray:
    """(nh^d)^-1 sum_i Q(v_i) Q(v_i)^T."""
    h = config.require_h()
    _, L, _, qb = _xparts(sample, ev.xa, config)
    Q = qb * L[:, None]
    return Q.T @ Q / (sample.n * h**sample.d)


def t_hat_yy(sample: Sample, y1: float, y2: float, config: EstimatorConfig,
             exclude_diagonal: bool = True) -> np.ndarray:
    """(n^2 h^2)^-1 sum_{i != j} min((y_i - y1)/h, (y_j - y2)/h) P(u_i) P(u'_j)^T.

    Each index is standardized around its own centre. With
    ``exclude_diagonal=False`` the i = j terms are kept.
    """
    h = config.require_h()
    u1, k1, p1 = _yparts(sample, y1, config)
    u2, k2, p2 = _yparts(sample, y2, config)
    I = np.flatnonzero(k1 > 0)
    J = np.flatnonzero(k2 > 0)
    P1 = p1[I] * k1[I, None]
    P2 = p2[J] * k2[J, None]
    T = np.zeros((config.p + 1, config.p + 1))
    step = 2048
    for s in range(0, I.size, step):
        M = np.minimum.outer(u1[I[s:s + step]], u2[J])
        T += P1[s:s + step].T @ (M @ P2)
    if exclude_diagonal:
        both = np.flatnonzero((k1 > 0) & (k2 > 0))
        if both.size:
            A = p1[both] * k1[both, None]
            B = p2[both] * k2[both, None]
            T -= (A * np.minimum(u1[both], u2[both])[:, None]).T @ B
    return T / (sample.n**2 * h**2)


def r_hat(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> np.ndarray:
    """Double sum over 1(y_i <= y_j) computed with a prefix sum over sorted y."""
    h = config.require_h()
    d = sample.d
    nu = config.nu_for(d)
    _, k, pb = _yparts(sample, ev.y, config)
    _, L, _, qb = _xparts(sample, ev.xa, config)
    Q = qb * L[:, None]
    C = sample.prefix_le(Q.T).T  # (n, B): sum of Q_i over y_i <= y_j
    win = np.flatnonzero(k > 0)
    P = pb[win] * k[win, None]
    scale = sample.n**2 * h ** (1 + d + config.mu + sum(nu))
    return P.T @ C[win] / scale


def ties_in_y(sample: Sample) -> bool:
    """True if any two observations share the same y value."""
    ys = sample.y_sorted
    return bool(ys.size > 1 and np.any(ys[1:] == ys[:-1]))


@dataclass
class DesignSystem:
    S_y: np.ndarray
    S_x: np.ndarray
    R: np.ndarray
    rcond_y: float
    rcond_x: float
    n_eff_y: int
    n_eff_x: int


def design_system(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> DesignSystem:
    _, k, _ = _yparts(sample, ev.y, config)
    _, L, _, _ = _xparts(sample, ev.xa, config)
    Sy = s_hat_y(sample, ev, config)
    Sx = s_hat_x(sample, ev, config)
    return DesignSystem(Sy, Sx, r_hat(sample, ev, config), rcond(Sy), rcond(Sx),
                        int(np.count_nonzero(k > 0)), int(np.count_nonzero(L > 0)))


# ---------------------------------------------------------------------------
# quadrature and integrated pieces


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(n: int = GL_NODES):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def gl_segments(lo, hi, n: int = GL_NODES):
    """Gauss-Legendre nodes/weights on [lo, hi], split at 0 (kernel kink).

    ``lo`` and ``hi`` broadcast; returns arrays of shape (..., 2n). Empty
    pieces get zero weight.
    """
    t, w = _gl(n)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    lo, hi = np.broadcast_arrays(lo, hi)
    pieces = []
    for a, b in ((lo, np.minimum(hi, 0.0)), (np.maximum(lo, 0.0), hi)):
        b = np.maximum(b, a)
        half = (b - a)[..., None] / 2
        mid = (a + b)[..., None] / 2
        pieces.append((mid + half * t, half * w))
    nodes = np.concatenate([pieces[0][0], pieces[1][0]], axis=-1)
    weights = np.concatenate([pieces[0][1], pieces[1][1]], axis=-1)
    return nodes, weights


def _y_window(y0: float, h: float, support: SupportModel):
    lo, hi = support.y_support
    return max((lo - y0) / h, -1.0), min((hi - y0) / h, 1.0)


def _x_window(x0: np.ndarray, h: float, support: SupportModel):
    lo = np.maximum((support.x_support[:, 0] - x0) / h, -1.0)
    hi = np.minimum((support.x_support[:, 1] - x0) / h, 1.0)
    return lo, hi


@dataclass
class IntegratedMatrices:
    """Model-integrated matrices over the truncated standardized window.

    ``c_y[l]`` is c_{y,l} for l = 0..p+2; ``c_x`` maps multi-indices with
    |m| <= q+2 to c_{x,m}.
    """

    S_y: np.ndarray
    c_y: np.ndarray
    T_y: np.ndarray
    S_x: np.ndarray
    c_x: dict = field(default_factory=dict)
    T_x: np.ndarray | None = None
    y_window: tuple = (-1.0, 1.0)
    x_window: tuple = ()
    y_boundary: bool = False
    x_boundary: bool = False


def _integrated_y(y0, cfg: EstimatorConfig, support: SupportModel):
    h = cfg.require_h()
    p = cfg.p
    ta, tb = _y_window(y0, h, support)
    if support.y_atoms is not None:
        z = np.asarray(support.y_atoms, dtype=float)
        t = (z - y0) / h
        k = np.asarray(kernel_eval(cfg.kernel, t))
        use = k > 0
        t, k = t[use], k[use]
        w = np.full(t.size, 1.0 / (z.size * h))
        pb = poly_basis_1d(p, t)
        P = pb * k[:, None]
        Sy = (pb * w[:, None]).T @ P
        c_y = np.stack([(P * (w * t**ell / factorial(ell))[:, None]).sum(axis=0)
                        for ell in range(p + 3)])
        Ty = P.T @ (np.minimum.outer(t, t) * np.outer(w, w)) @ P
        return Sy, c_y, Ty, (ta, tb)
    if not ta < tb:
        raise ValueError("evaluation y is outside the support window")
    t, w = gl_segments(ta, tb)
    g = support.g(y0 + h * t)
    wg = w * g
    pb = poly_basis_1d(p, t)
    P = pb * np.asarray(kernel_eval(cfg.kernel, t))[:, None]
    Sy = (pb * wg[:, None]).T @ P
    c_y = np.stack([(P * (wg * t**ell / factorial(ell))[:, None]).sum(axis=0)
                    for ell in range(p + 3)])
    # T_y = A + A^T, A = int u1 P(u1) g [int_{u1}^{tb} P(u2) g du2]^T du1
    t2, w2 = gl_segments(t, tb)  # (N, M)
    g2 = support.g(y0 + h * t2)
    P2 = poly_basis_1d(p, t2) * np.asarray(kernel_eval(cfg.kernel, t2))[..., None]
    inner = np.einsum("nm,nmk->nk", w2 * g2, P2)
    A = (P * (wg * t)[:, None]).T @ inner
    Ty = A + A.T
    return Sy, c_y, Ty, (ta, tb)


def _integrated_x(x0, cfg: EstimatorConfig, support: SupportModel, d: int):
    h = cfg.require_h()
    basis = MultiIndexBasis(d, cfg.q)
    extra = [m for k in range(cfg.q + 3) for m in MultiIndexBasis(d, k).of_degree(k)]
    lo, hi = _x_window(x0, h, support)
    if support.x_atoms is not None:
        xa = np.atleast_2d(np.asarray(support.x_atoms, dtype=float))
        v = (xa - x0) / h
        L = np.prod(np.asarray(kernel_eval(cfg.kernel, v)).reshape(v.shape), axis=1)
        use = L > 0
        v, L = v[use], L[use]
        w = np.full(v.shape[0], 1.0 / (xa.shape[0] * h**d))
        qb = poly_basis_multi(basis, v)
        Q = qb * L[:, None]
        Sx = (qb * w[:, None]).T @ Q
        mono = monomials(extra, v)
        c_x = {m: (Q * (w * mono[:, k])[:, None]).sum(axis=0) for k, m in enumerate(extra)}
        Tx = (Q * w[:, None]).T @ Q
        return Sx, c_x, Tx, (lo, hi)
    if d > MAX_INTEGRATED_DIM:
        raise ValueError(f"integrated x-matrices support d <= {MAX_INTEGRATED_DIM}, got d={d}")
    if np.any(lo >= hi):
        raise ValueError("evaluation x is outside the support window")
    axes = [gl_segments(lo[k], hi[k]) for k in range(d)]
    mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wmesh = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    v = np.column_stack([m.ravel() for m in mesh])
    w = np.prod(np.column_stack([m.ravel() for m in wmesh]), axis=1)
    w = w * support.fx(x0 + h * v)
    L = np.prod(np.asarray(kernel_eval(cfg.kernel, v)).reshape(v.shape), axis=1)
    qb = poly_basis_multi(basis, v)
    Q = qb * L[:, None]
    Sx = (qb * w[:, None]).T @ Q
    mono = monomials(extra, v)
    c_x = {m: (Q * (w * mono[:, k])[:, None]).sum(axis=0) for k, m in enumerate(extra)}
    Tx = (Q * w[:, None]).T @ Q
    return Sx, c_x, Tx, (lo, hi)


def integrated_matrices(ev: EvalPoint, config: EstimatorConfig,
                        support: SupportModel) -> IntegratedMatrices:
    """S_y, c_{y,l}, T_y, S_x, c_{x,m}, T_x by quadrature over the truncated window."""
    d = support.d
    if len(ev.x) != d:
        raise ValueError("evaluation point and support dimensions differ")
    if d > MAX_INTEGRATED_DIM and support.x_atoms is None:
        raise ValueError(f"integrated x-matrices support d <= {MAX_INTEGRATED_DIM}, got d={d}")
    Sy, c_y, Ty, yw = _integrated_y(ev.y, config, support)
    Sx, c_x, Tx, xw = _integrated_x(ev.xa, config, support, d)
    yb = bool(yw[0] > -1.0 or yw[1] < 1.0)
    xb = bool(np.any(xw[0] > -1.0) or np.any(xw[1] < 1.0))
    return IntegratedMatrices(Sy, c_y, Ty, Sx, c_x, Tx, yw, xw, yb, xb)


def r_bar(sample: Sample, ev: EvalPoint, config: EstimatorConfig,
          support: SupportModel) -> np.ndarray:
    """Local-smoothing analogue of r_hat: the inner y-average is taken under G.

    ``(n h^(1+d+mu+|nu|))^-1 sum_i [int 1(y_i <= u) P((u-y)/h) dG(u)] Q(v_i)^T``.
    """
    h = config.require_h()
    d = sample.d
    nu = config.nu_for(d)
    _, L, _, qb = _xparts(sample, ev.xa, config)
    Q = qb * L[:, None]
    act = np.flatnonzero(L > 0)
    p = config.p
    if support.y_atoms is not None:
        z = np.asarray(support.y_atoms, dtype=float)
        t = (z - ev.y) / h
        Pz = poly_basis_1d(p, t) * np.asarray(kernel_eval(config.kernel, t))[:, None]
        zs = Sample(z, np.zeros((z.size, 1)))
        # inner_i = (1/m) sum_k 1(y_i <= z_k) P(t_k)
        order = zs.sort_perm
        suffix = np.concatenate([np.cumsum(Pz[order][::-1], axis=0)[::-1], np.zeros((1, p + 1))])
        pos = np.searchsorted(zs.y_sorted, sample.y[act], side="left")
        inner = suffix[pos] / z.size
        scale = sample.n * h ** (1 + d + config.mu + sum(nu))
    else:
        ta, tb = _y_window(ev.y, h, support)
        if not ta < tb:
            return np.zeros((p + 1, len(MultiIndexBasis(d, config.q))))
        lo = np.clip((sample.y[act] - ev.y) / h, ta, tb)
        lo = np.maximum(lo, ta)
        t, w = gl_segments(lo, tb)
        g = support.g(ev.y + h * t)
        Pt = poly_basis_1d(p, t) * np.asarray(kernel_eval(config.kernel, t))[..., None]
        inner = np.einsum("nm,nmk->nk", w * g, Pt)
        scale = sample.n * h ** (d + config.mu + sum(nu))
    return inner.T @ Q[act] / scale
