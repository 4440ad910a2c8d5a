"""Closed-form local polynomial estimators of conditional CDF derivatives.

The estimator of d^mu/dy^mu d^nu/dx^nu F(y|x) factors as
``theta = n^-2 sum_j sum_i 1(y_i <= y_j) a_j b_i`` with the projection weights
``a_j = h^-(1+mu) e_mu' S_y^-1 P(u_j)`` and ``b_i = h^-(d+|nu|) e_nu' S_x^-1 Q(v_i)``,
so one prefix sum over the y-order gives the double sum in O(n log n).
The conditional density derivative of order theta is the case mu = 1 + theta,
nu = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import (
    DegenerateDesign,
    EstimatorConfig,
    EvalPoint,
    Sample,
    SupportModel,
    _xparts,
    _yparts,
    _integrated_y,
    as_grid,
    r_bar,
    s_hat_x,
    solve_design,
)
from .kernel_basis import MultiIndexBasis

__all__ = [
    "EstimateResult",
    "GridFit",
    "LocalProjection",
    "check_estimate",
    "density_config",
    "empirical_cdf_y",
    "estimate",
    "estimate_cdf",
    "estimate_density",
    "fit_grid",
    "local_projection",
]


@dataclass
class EstimateResult:
    value: float
    se: float | None = None
    h_used: float | None = None
    orders: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.se is not None and not (np.isfinite(self.se) and self.se >= 0):
            raise ValueError("standard error must be finite and nonnegative")


@dataclass
class LocalProjection:
    """Projection weights at one evaluation point (length-n, zero off-window)."""

    a: np.ndarray
    b: np.ndarray
    value: float
    rcond_y: float
    rcond_x: float
    n_eff_y: int
    n_eff_x: int


def local_projection(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> LocalProjection:
    h = config.require_h()
    d = sample.d
    nu = config.nu_for(d)
    _, k, pb = _yparts(sample, ev.y, config)
    _, L, basis, qb = _xparts(sample, ev.xa, config)
    n = sample.n
    P = pb * k[:, None]
    Q = qb * L[:, None]
    Sy = P.T @ pb / (n * h)
    Sx = Q.T @ qb / (n * h**d)
    ny = int(np.count_nonzero(k > 0))
    nx = int(np.count_nonzero(L > 0))
    e_mu = np.zeros(config.p + 1)
    e_mu[config.mu] = 1.0
    zy, rcy = solve_design(Sy, e_mu, ny)
    zx, rcx = solve_design(Sx, basis.unit(nu), nx)
    a = (P @ zy) / h ** (1 + config.mu)
    b = (Q @ zx) / h ** (d + sum(nu))
    value = float(a @ sample.prefix_le(b)) / n**2
    return LocalProjection(a, b, value, rcy, rcx, ny, nx)


def _orders(config: EstimatorConfig, d: int) -> tuple:
    return (config.p, config.q, config.mu, config.nu_for(d))


def estimate(sample: Sample, ev: EvalPoint, config: EstimatorConfig) -> EstimateResult:
    """e_mu' S_y^-1 R S_x^-1 e_nu at one evaluation point."""
    lp = local_projection(sample, ev, config)
    diag = {"rcond_y": lp.rcond_y, "rcond_x": lp.rcond_x,
            "n_eff_y": lp.n_eff_y, "n_eff_x": lp.n_eff_x}
    return EstimateResult(lp.value, None, config.h, _orders(config, sample.d), diag)


def density_config(theta: int = 0, p: int = 2, q: int | None = None, h: float | None = None,
                   kernel="epanechnikov", base: EstimatorConfig | None = None) -> EstimatorConfig:
    """Config for the theta-th y-derivative of the conditional density."""
    if theta < 0:
        raise ValueError("derivative order must be nonnegative")
    if base is not None:
        p, h, kernel = base.p, base.h if h is None else h, base.kernel
        if q is None and not base.q_auto:
            q = base.q
    if p < 1 + theta:
        raise ValueError(f"density derivative of order {theta} needs p >= {1 + theta}, got p={p}")
    return EstimatorConfig(p=p, q=q, mu=1 + theta, nu=None, h=h, kernel=kernel)


def estimate_density(sample: Sample, ev: EvalPoint, theta: int = 0,
                     config: EstimatorConfig | None = None, **kw) -> EstimateResult:
    """Conditional density derivative f^(theta)(y|x); q defaults to p - theta - 1."""
    cfg = density_config(theta, base=config, **kw)
    return estimate(sample, ev, cfg)


def estimate_cdf(sample: Sample, ev: EvalPoint, config: EstimatorConfig,
                 clip: bool = False) -> EstimateResult:
    """Local polynomial regression of 1(y_i <= y) on q((x_i - x)/h).

    With a nonzero ``nu`` in the config the corresponding x-derivative is
    returned. The value is not clipped to [0, 1] unless ``clip`` is set.
    """
    h = config.require_h()
    d = sample.d
    nu = config.nu_for(d)
    _, L, basis, qb = _xparts(sample, ev.xa, config)
    Q = qb * L[:, None]
    Sx = Q.T @ qb / (sample.n * h**d)
    ind = (sample.y <= ev.y).astype(float)
    rhs = Q.T @ ind / (sample.n * h**d)
    nx = int(np.count_nonzero(L > 0))
    z, rc = solve_design(Sx, rhs, nx)
    value = float(z[basis.position(nu)]) / h ** sum(nu)
    if clip:
        value = min(max(value, 0.0), 1.0)
    return EstimateResult(value, None, h, (None, config.q, 0, nu),
                          {"rcond_x": rc, "n_eff_x": nx})


def check_estimate(sample: Sample, ev: EvalPoint, config: EstimatorConfig,
                   support: SupportModel) -> EstimateResult:
    """Local-smoothing variant: integrated S_y and r_bar under the weighting G.

    With ``SupportModel.empirical(sample)`` this reproduces ``estimate``.
    """
    h = config.require_h()
    d = sample.d
    nu = config.nu_for(d)
    Sy, _, _, yw = _integrated_y(ev.y, config, support)
    R = r_bar(sample, ev, config, support)
    e_mu = np.zeros(config.p + 1)
    e_mu[config.mu] = 1.0
    if not np.any(R):
        return EstimateResult(0.0, None, h, _orders(config, d),
                              {"empty_window": True, "degenerate": "no observations in window"})
    Sx = s_hat_x(sample, ev, config)
    _, L, basis, _ = _xparts(sample, ev.xa, config)
    zy, rcy = solve_design(Sy, e_mu)
    zx, rcx = solve_design(Sx, basis.unit(nu), int(np.count_nonzero(L > 0)))
    return EstimateResult(float(zy @ R @ zx), None, h, _orders(config, d),
                          {"rcond_y": rcy, "rcond_x": rcx, "y_window": yw})


def empirical_cdf_y(sample: Sample, y: float) -> float:
    return float(np.searchsorted(sample.y_sorted, y, side="right")) / sample.n


@dataclass
class GridFit:
    """Projection weights and estimates over an evaluation grid.

    Rows of ``a`` and ``b`` are zero at unusable points; ``errors`` maps a
    point index to the reason it is unusable.
    """

    ys: np.ndarray
    xs: np.ndarray
    config: EstimatorConfig
    values: np.ndarray
    a: np.ndarray
    b: np.ndarray
    n_eff: np.ndarray
    usable: np.ndarray
    errors: dict

    @property
    def G(self) -> int:
        return self.ys.size


def fit_grid(sample: Sample, grid, config: EstimatorConfig, min_eff: int | None = None) -> GridFit:
    """Evaluate the estimator on a grid, flagging degenerate points.

    ``min_eff`` sets the smallest acceptable window count (in both y and x);
    points below it are flagged unusable instead of raising.
    """
    ys, xs = as_grid(grid)
    G, n = ys.size, sample.n
    A = np.zeros((G, n))
    B = np.zeros((G, n))
    vals = np.full(G, np.nan)
    neff = np.zeros((G, 2), dtype=int)
    usable = np.zeros(G, dtype=bool)
    errors = {}
    for g in range(G):
        try:
            lp = local_projection(sample, EvalPoint(ys[g], xs[g]), config)
        except DegenerateDesign as exc:
            errors[g] = str(exc)
            continue
        neff[g] = (lp.n_eff_y, lp.n_eff_x)
        if min_eff is not None and min(lp.n_eff_y, lp.n_eff_x) < min_eff:
            errors[g] = f"effective window count {min(lp.n_eff_y, lp.n_eff_x)} below {min_eff}"
            continue
        A[g], B[g], vals[g] = lp.a, lp.b, lp.value
        usable[g] = True
    return GridFit(ys, xs, config, vals, A, B, neff, usable, errors)


def min_effective_count(config: EstimatorConfig, d: int) -> int:
    """Twice the larger basis size: the window count bands and tests require."""
    return 2 * max(config.p + 1, len(MultiIndexBasis(d, config.q)))
