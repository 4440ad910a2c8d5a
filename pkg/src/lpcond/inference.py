"""Uniform inference over a grid: sup-t critical values, bands and tests.

Critical values are quantiles of the supremum of a Gaussian vector with the
estimated correlation. Draws come from Philox streams keyed by (seed, block)
so the result does not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandwidth import rot_imse_h
from .covariance import CovarianceSurface, covariance_surface, to_correlation_psd
from .design import EstimatorConfig, Sample, SupportModel, as_grid
from .estimator import density_config, fit_grid, min_effective_count

__all__ = [
    "BandOptions",
    "BandResult",
    "CriticalValue",
    "TestResult",
    "confidence_band",
    "select_bandwidth",
    "shape_test",
    "simulate_sup_cv",
    "spec_test",
    "studentized_fit",
    "t_process",
]

DEFAULT_DRAWS = 3000
BLOCK = 1000
SIDES = ("two_sided_abs", "one_sided_sup")


@dataclass
class CriticalValue:
    alpha: float
    value: float
    draws: int
    sided: str
    seed: int
    sups: np.ndarray = field(default=None, repr=False)

    def p_value(self, statistic: float) -> float:
        """Fraction of simulated suprema at or above the statistic."""
        return float(np.mean(self.sups >= statistic))


def _sqrt_psd(corr: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(corr)
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("correlation factorization failed")
    return (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T


def _block_sups(root: np.ndarray, seed: int, block: int, size: int, two_sided: bool):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    z = rng.standard_normal((size, root.shape[0])) @ root
    return np.max(np.abs(z), axis=1) if two_sided else np.max(z, axis=1)


def simulate_sup_cv(surface: CovarianceSurface | np.ndarray, alpha: float = 0.05,
                    sided: str = "two_sided_abs", draws: int = DEFAULT_DRAWS, seed: int = 0,
                    threads: int = 1) -> CriticalValue:
    """(1 - alpha) quantile of sup|G| (or sup G) for G ~ N(0, corr).

    A CovarianceSurface is first repaired to PSD and its usable points are
    put in canonical (x, y) order, so permuting the grid leaves the result
    unchanged. The quantile is the order statistic at ceil((1 - alpha) draws).
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if sided not in SIDES:
        raise ValueError(f"sided must be one of {SIDES}")
    if draws < 1000:
        raise ValueError("need at least 1000 draws")
    if isinstance(surface, CovarianceSurface):
        rep = to_correlation_psd(surface)
        u = np.flatnonzero(rep.usable)
        keys = [rep.ys[u]] + [rep.xs[u, k] for k in range(rep.xs.shape[1] - 1, -1, -1)]
        order = u[np.lexsort(keys)]
        corr = rep.corr[np.ix_(order, order)]
    else:
        corr = np.atleast_2d(np.asarray(surface, dtype=float))
    root = _sqrt_psd(0.5 * (corr + corr.T))
    sizes = [min(BLOCK, draws - s) for s in range(0, draws, BLOCK)]
    two = sided == "two_sided_abs"
    jobs = [(root, int(seed), b, sz, two) for b, sz in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda a: _block_sups(*a), jobs))
    else:
        parts = [_block_sups(*a) for a in jobs]
    sups = np.concatenate(parts)
    k = math.ceil((1 - alpha) * draws)
    value = float(np.sort(sups)[k - 1])
    return CriticalValue(alpha, value, draws, sided, int(seed), sups)


@dataclass
class BandOptions:
    """Knobs shared by bands and tests.

    ``p`` is the order used for bandwidth selection (default 2 + theta). With
    ``rbc`` the estimate and its covariance use orders p+1, q+1 at the same h.
    ``bw`` is "rot" (grid-aggregated rule of thumb) or a positive number.
    """

    p: int | None = None
    q: int | None = None
    kernel: str = "epanechnikov"
    bw: str | float = "rot"
    rbc: bool = True
    cov_method: str = "jackknife"
    draws: int = DEFAULT_DRAWS
    seed: int = 0
    threads: int = 1
    support: SupportModel | None = None


@dataclass
class BandResult:
    ys: np.ndarray
    xs: np.ndarray
    estimates: np.ndarray
    se: np.ndarray
    cv: CriticalValue
    lower: np.ndarray
    upper: np.ndarray
    rbc: bool
    h_used: float
    orders_used: tuple
    dropped: dict = field(default_factory=dict)
    surface: CovarianceSurface | None = field(default=None, repr=False)


@dataclass
class TestResult:
    statistic: float
    cv: CriticalValue
    reject: bool
    p_value: float
    per_point: np.ndarray
    dropped: dict = field(default_factory=dict)


def select_bandwidth(sample: Sample, grid, config: EstimatorConfig, bw) -> tuple[float, dict]:
    if isinstance(bw, (int, float)) and not isinstance(bw, bool):
        if not bw > 0:
            raise ValueError("fixed bandwidth must be positive")
        return float(bw), {"mode": "fixed"}
    if bw in ("rot", "imse"):
        res = rot_imse_h(sample, grid, config)
        return res.h, {"mode": "rot", "case_id": res.case_id, "clamped": res.clamped,
                       **res.diagnostics}
    raise ValueError(f"unknown bandwidth mode {bw!r}")


def base_config(theta: int, options: BandOptions) -> EstimatorConfig:
    p = 2 + theta if options.p is None else options.p
    return density_config(theta, p=p, q=options.q, kernel=options.kernel)


def studentized_fit(sample: Sample, grid, theta: int, options: BandOptions,
                    rbc: bool | None = None, h: float | None = None):
    """Estimates, covariance surface and config at the inference order.

    Returns (surface, config, h, bandwidth diagnostics).
    """
    rbc = options.rbc if rbc is None else rbc
    cfg = base_config(theta, options)
    if h is None:
        h, bwinfo = select_bandwidth(sample, grid, cfg, options.bw)
    else:
        bwinfo = {"mode": "given"}
    est = cfg.with_(h=h)
    if rbc:
        est = est.with_(p=cfg.p + 1, q=cfg.q + 1)
    fit = fit_grid(sample, grid, est, min_effective_count(est, sample.d))
    surf = to_correlation_psd(covariance_surface(sample, grid, est, options.cov_method, fit))
    return surf, est, h, bwinfo


def _band(surf: CovarianceSurface, est: EstimatorConfig, h: float, alpha: float,
          options: BandOptions, rbc: bool) -> BandResult:
    cv = simulate_sup_cv(surf, alpha, "two_sided_abs", options.draws, options.seed, options.threads)
    se = np.sqrt(surf.var)
    if np.any(se[surf.usable] <= 0):
        raise ArithmeticError("zero standard error at a usable grid point")
    lower = surf.values - cv.value * se
    upper = surf.values + cv.value * se
    return BandResult(surf.ys, surf.xs, surf.values, se, cv, lower, upper, rbc, h,
                      (est.p, est.q, est.mu), dict(surf.errors), surf)


def confidence_band(sample: Sample, grid, theta: int = 0, alpha: float = 0.05,
                    options: BandOptions | None = None, h: float | None = None) -> BandResult:
    """Uniform band estimate +/- cv * se over the grid.

    With robust bias correction the bandwidth chosen at order p is reused
    to estimate at order p+1, and the covariance is recomputed there.
    """
    options = BandOptions() if options is None else options
    surf, est, h, _ = studentized_fit(sample, grid, theta, options, h=h)
    return _band(surf, est, h, alpha, options, options.rbc)


def t_process(surface: CovarianceSurface, centering) -> np.ndarray:
    """(estimate - centering) / se per grid point; NaN at unusable points."""
    c = np.broadcast_to(np.asarray(centering, dtype=float), surface.values.shape)
    se = np.sqrt(surface.var)
    out = np.full(surface.values.shape, np.nan)
    ok = surface.usable & (se > 0)
    out[ok] = (surface.values[ok] - c[ok]) / se[ok]
    return out


def _values_for(grid, values) -> np.ndarray:
    ys, _ = as_grid(grid)
    v = np.asarray(values, dtype=float).ravel()
    if v.size != ys.size:
        raise ValueError(f"{v.size} values supplied for a grid of {ys.size} points")
    return v


def spec_test(sample: Sample, grid, parametric_values, alpha: float = 0.05, theta: int = 0,
              options: BandOptions | None = None, h: float | None = None) -> TestResult:
    """Reject the parametric fit if sup |T| exceeds the two-sided critical value."""
    options = BandOptions() if options is None else options
    vals = _values_for(grid, parametric_values)
    surf, _, _, _ = studentized_fit(sample, grid, theta, options, h=h)
    T = t_process(surf, vals)
    stat = float(np.max(np.abs(T[surf.usable])))
    cv = simulate_sup_cv(surf, alpha, "two_sided_abs", options.draws, options.seed, options.threads)
    return TestResult(stat, cv, stat > cv.value, cv.p_value(stat), T, dict(surf.errors))


def shape_test(sample: Sample, grid, c_values, alpha: float = 0.05, theta: int = 0,
               options: BandOptions | None = None, h: float | None = None) -> TestResult:
    """Test f^(theta) <= c on the grid with the one-sided sup statistic."""
    options = BandOptions() if options is None else options
    vals = _values_for(grid, c_values)
    surf, _, _, _ = studentized_fit(sample, grid, theta, options, h=h)
    T = t_process(surf, vals)
    stat = float(np.max(T[surf.usable]))
    cv = simulate_sup_cv(surf, alpha, "one_sided_sup", options.draws, options.seed, options.threads)
    return TestResult(stat, cv, stat > cv.value, cv.p_value(stat), T, dict(surf.errors))
