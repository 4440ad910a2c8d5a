"""Covariance of the estimator across an evaluation grid.

Three estimators are offered:

* ``plugin``: the sample second moment of the equivalent-kernel influence
  of each observation,
  ``K_i(g) = b_i(g) n^-1 sum_j (1(y_i <= y_j) - F(y_j | x_i)) a_j(g)``.
* ``jackknife`` (default): leave-one-out projections of the second-order
  V-statistic representation ``theta = n^-2 sum_ij 1(y_i <= y_j) a_j b_i``.
* ``asymptotic``: the sample analogue of the leading variance, with
  cross terms only between points sharing the same x.

Each returns a CovarianceSurface whose ``cov`` approximates the covariance of
the estimates themselves (so ``sqrt(var)`` is a standard error).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .design import (
    DegenerateDesign,
    EstimatorConfig,
    EvalPoint,
    Sample,
    s_hat_x,
    s_hat_y,
    solve_design,
    t_hat_x,
    t_hat_yy,
)
from .estimator import GridFit, estimate, fit_grid
from .kernel_basis import MultiIndexBasis, kernel_eval, poly_basis_multi

__all__ = [
    "METHODS",
    "CovarianceSurface",
    "asymptotic_covariance",
    "covariance_surface",
    "jackknife_covariance",
    "plugin_covariance",
    "to_correlation_psd",
]

METHODS = ("jackknife", "plugin", "asymptotic")
PSD_EPS = 1e-10


@dataclass
class CovarianceSurface:
    """Covariance over a grid. Unusable points carry NaN rows and columns."""

    ys: np.ndarray
    xs: np.ndarray
    cov: np.ndarray
    var: np.ndarray
    corr: np.ndarray
    method: str
    usable: np.ndarray
    values: np.ndarray
    psd_jitter: float = 0.0
    errors: dict = field(default_factory=dict)

    @property
    def G(self) -> int:
        return self.ys.size

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.var)

    def usable_corr(self) -> np.ndarray:
        u = self.usable
        return self.corr[np.ix_(u, u)]


def _finish(fit: GridFit, cov_u: np.ndarray, method: str, extra_bad=None) -> CovarianceSurface:
    G = fit.G
    usable = fit.usable.copy()
    errors = dict(fit.errors)
    idx = np.flatnonzero(fit.usable)
    cov_u = 0.5 * (cov_u + cov_u.T)
    dv = np.diag(cov_u).copy()
    for k, g in enumerate(idx):
        if not (np.isfinite(dv[k]) and dv[k] > 0):
            usable[g] = False
            errors.setdefault(int(g), "nonpositive variance")
    if extra_bad:
        for g, why in extra_bad.items():
            usable[g] = False
            errors.setdefault(int(g), why)
    need = min(2, G)
    if np.count_nonzero(usable) < need:
        raise DegenerateDesign(
            f"only {np.count_nonzero(usable)} usable grid points out of {G}"
        )
    cov = np.full((G, G), np.nan)
    cov[np.ix_(idx, idx)] = cov_u
    keep = np.flatnonzero(usable)
    full = np.full((G, G), np.nan)
    full[np.ix_(keep, keep)] = cov[np.ix_(keep, keep)]
    var = np.full(G, np.nan)
    var[keep] = np.diag(full)[keep]
    corr = np.full((G, G), np.nan)
    s = np.sqrt(var[keep])
    c = full[np.ix_(keep, keep)] / np.outer(s, s)
    np.fill_diagonal(c, 1.0)
    corr[np.ix_(keep, keep)] = c
    return CovarianceSurface(fit.ys, fit.xs, full, var, corr, method, usable, fit.values, 0.0, errors)


def _local_cdf_weights(sample: Sample, xi: np.ndarray, cand: np.ndarray,
                       config: EstimatorConfig) -> np.ndarray:
    """Rows w(x_i) with F(y | x_i) = sum_k w_k(x_i) 1(y_k <= y), over candidates."""
    h = config.h
    d = sample.d
    basis = MultiIndexBasis(d, config.q)
    V = (sample.x[cand][None, :, :] - xi[:, None, :]) / h
    Lk = np.prod(np.asarray(kernel_eval(config.kernel, V)), axis=-1)
    qb = poly_basis_multi(basis, V)
    Qk = qb * Lk[..., None]
    Sx = np.matmul(Qk.transpose(0, 2, 1), qb) / (sample.n * h**d)
    e0 = np.zeros(len(basis))
    e0[0] = 1.0
    try:
        z = np.linalg.solve(Sx, np.broadcast_to(e0, Sx.shape[:2])[..., None])[..., 0]
    except np.linalg.LinAlgError:
        z = np.stack([np.linalg.lstsq(M, e0, rcond=None)[0] for M in Sx])
    return np.matmul(Qk, z[..., None])[..., 0] / (sample.n * h**d)


@dataclass
class _Influence:
    K: np.ndarray  # (n, Gu): b_i (SA_i - sum_j F(y_j|x_i) a_j) / n
    beta: np.ndarray  # (Gu, n): sum_i b_i w_k(x_i), so sum_i b_i F(t|x_i) is a prefix sum
    F_self: np.ndarray  # (Gu, n): F(y_i | x_i) where b_i != 0


def _influence(sample: Sample, fit: GridFit, chunk: int = 256) -> _Influence:
    """Equivalent-kernel pieces shared by the plug-in and centred jackknife."""
    h = fit.config.require_h()
    n = sample.n
    gidx = np.flatnonzero(fit.usable)
    Kmat = np.zeros((n, gidx.size))
    beta = np.zeros((gidx.size, n))
    F_self = np.zeros((gidx.size, n))
    SA_all = sample.suffix_ge(fit.a[gidx])
    groups: dict[tuple, list[int]] = {}
    for k, x0 in enumerate(fit.xs[gidx]):
        groups.setdefault(tuple(x0), []).append(k)
    for x0, cols in groups.items():
        x0 = np.asarray(x0)
        cols = np.asarray(cols)
        b = fit.b[gidx[cols[0]]]  # identical rows within a group
        I = np.flatnonzero(b != 0)
        cand = np.flatnonzero(np.max(np.abs(sample.x - x0), axis=1) <= 2 * h)
        SA = SA_all[cols]
        SA_c = SA[:, cand]
        y_c = sample.y[cand]
        bsum = np.zeros(cand.size)
        for s in range(0, I.size, chunk):
            Ic = I[s:s + chunk]
            W = _local_cdf_weights(sample, sample.x[Ic], cand, fit.config)
            fitted = W @ SA_c.T
            Kmat[Ic[:, None], cols[None, :]] = b[Ic][:, None] * (SA[:, Ic].T - fitted) / n
            bsum += b[Ic] @ W
            Fs = np.einsum("cm,cm->c", W, (y_c[None, :] <= sample.y[Ic][:, None]))
            F_self[np.ix_(cols, Ic)] = Fs[None, :]
        beta[np.ix_(cols, cand)] = bsum[None, :]
    return _Influence(Kmat, beta, F_self)


def jackknife_covariance(sample: Sample, grid, config: EstimatorConfig,
                         fit: GridFit | None = None, centered: bool = True) -> CovarianceSurface:
    """Jackknife covariance from leave-one-out V-statistic projections.

    The pair kernel is ``k(i, j) = c_ij a_j b_i`` and ``u_ij`` its
    symmetrization; ``L_i = 2/(n-1) sum_{j != i} (u_ij - mean u)`` and the
    covariance of the estimates is ``sum_i L_i L_i' / (n (n-1))``.

    With ``centered`` (default) ``c_ij = 1(y_i <= y_j) - F(y_j | x_i)`` using
    the local polynomial CDF fit. This accounts for the randomness of the
    y-design matrix, which otherwise inflates the variance by a factor of
    order 1/h. ``centered=False`` uses the raw indicator and centres ``L_i``
    at the estimate.
    """
    fit = fit_grid(sample, grid, config) if fit is None else fit
    n = sample.n
    if n < 2:
        raise ValueError("jackknife needs n >= 2")
    u = fit.usable
    A, B = fit.a[u], fit.b[u]
    PB = sample.prefix_le(B)  # sum_j 1(y_j <= y_i) b_j
    if centered:
        inf = _influence(sample, fit)
        row = n * inf.K.T  # sum_j k(i, j)
        col = A * (PB - sample.prefix_le(inf.beta))  # sum_j k(j, i)
        S = 0.5 * (row + col) - (1.0 - inf.F_self) * A * B
        center = S.sum(axis=1) / (n * (n - 1.0))
    else:
        SA = sample.suffix_ge(A)  # sum_j 1(y_i <= y_j) a_j
        S = 0.5 * (B * (SA - A) + A * (PB - B))
        center = fit.values[u]
    L = 2.0 / (n - 1) * (S - (n - 1) * center[:, None])
    cov = L @ L.T / (n * (n - 1.0))
    return _finish(fit, cov, "jackknife")


def plugin_covariance(sample: Sample, grid, config: EstimatorConfig,
                      fit: GridFit | None = None) -> CovarianceSurface:
    """Plug-in covariance n^-2 sum_i K_i(g) K_i(g'), windowed for cost.

    Inner sums run over kernel windows only, O(G n_x (n_2h + cost of F)).
    """
    fit = fit_grid(sample, grid, config) if fit is None else fit
    K = _influence(sample, fit).K
    return _finish(fit, K.T @ K / sample.n**2, "plugin")


def asymptotic_covariance(sample: Sample, grid, config: EstimatorConfig,
                          fit: GridFit | None = None) -> CovarianceSurface:
    """Sample analogue of the leading variance (requires mu >= 1).

    Cross terms are computed only for grid pairs sharing x. Pairs with
    disjoint x-windows get 0; other differing-x pairs take the jackknife value.
    """
    if config.mu < 1:
        raise NotImplementedError(
            "the asymptotic variance is available for mu >= 1 only; the mu = 0 "
            "boundary-degenerate case has no closed form here, use jackknife or plugin"
        )
    fit = fit_grid(sample, grid, config) if fit is None else fit
    h = config.require_h()
    n, d = sample.n, sample.d
    nu = config.nu_for(d)
    basis = MultiIndexBasis(d, config.q)
    gidx = np.flatnonzero(fit.usable)
    dens_cfg = config.with_(mu=1, nu=None, q=config.q)
    e_mu = np.zeros(config.p + 1)
    e_mu[config.mu] = 1.0
    zy, xfac, th10 = [], [], []
    bad = {}
    for k, g in enumerate(gidx):
        ev = EvalPoint(fit.ys[g], fit.xs[g])
        zy.append(solve_design(s_hat_y(sample, ev, config), e_mu)[0])
        zx = solve_design(s_hat_x(sample, ev, config), basis.unit(nu))[0]
        xfac.append(float(zx @ t_hat_x(sample, ev, config) @ zx))
        if config.mu == 1 and sum(nu) == 0:
            t = fit.values[g]
        else:
            t = estimate(sample, ev, dens_cfg).value
        th10.append(t)
        if not t > 0:
            bad[int(g)] = "density estimate is not positive"
    scale = 1.0 / (n * h ** (d + 2 * sum(nu) + 2 * config.mu - 1))
    Gu = gidx.size
    cov = np.zeros((Gu, Gu))
    jk = None
    for k in range(Gu):
        for l in range(Gu):
            xk, xl = fit.xs[gidx[k]], fit.xs[gidx[l]]
            if np.array_equal(xk, xl):
                T = t_hat_yy(sample, fit.ys[gidx[k]], fit.ys[gidx[l]], config)
                cov[k, l] = scale * th10[k] * float(zy[k] @ T @ zy[l]) * xfac[k]
            elif np.max(np.abs(xk - xl)) > 2 * h:
                cov[k, l] = 0.0
            else:
                if jk is None:
                    jk = jackknife_covariance(sample, None, config, fit=fit).cov
                cov[k, l] = jk[gidx[k], gidx[l]]
    return _finish(fit, cov, "asymptotic", bad)


def covariance_surface(sample: Sample, grid, config: EstimatorConfig, method: str = "jackknife",
                       fit: GridFit | None = None) -> CovarianceSurface:
    if method == "jackknife":
        return jackknife_covariance(sample, grid, config, fit)
    if method == "plugin":
        return plugin_covariance(sample, grid, config, fit)
    if method == "asymptotic":
        return asymptotic_covariance(sample, grid, config, fit)
    raise ValueError(f"unknown covariance method {method!r}; choose from {METHODS}")


def to_correlation_psd(surface: CovarianceSurface) -> CovarianceSurface:
    """Correlation on usable points, repaired to PSD by diagonal jitter.

    If the smallest eigenvalue is negative, ``(1e-10 - lambda_min) I`` is added
    and the diagonal is renormalized to one; the jitter is recorded.
    """
    u = surface.usable
    cov = surface.cov[np.ix_(u, u)]
    s = np.sqrt(np.diag(cov))
    c = cov / np.outer(s, s)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    lam = float(np.linalg.eigvalsh(c)[0]) if c.size else 1.0
    jitter = 0.0
    if lam < 0:
        jitter = -lam + PSD_EPS
        c = c + jitter * np.eye(c.shape[0])
        dd = np.sqrt(np.diag(c))
        c = c / np.outer(dd, dd)
        c = 0.5 * (c + c.T)
        np.fill_diagonal(c, 1.0)
    corr = np.full_like(surface.corr, np.nan)
    corr[np.ix_(u, u)] = c
    return replace(surface, corr=corr, psd_jitter=jitter)
