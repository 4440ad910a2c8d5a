"""Data-generating processes, analytic truth oracles and the Monte Carlo harness.

Every random stream is a Philox generator keyed by a SeedSequence built from
(study seed, replication index, purpose), so any replication can be rerun on
its own and results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .design import DegenerateDesign, Sample
from .inference import BandOptions, _band, base_config, select_bandwidth, studentized_fit

__all__ = [
    "DGPS",
    "GridSpec",
    "MCReport",
    "NormalMixtureDGP",
    "StudyFailed",
    "StudyOptions",
    "TruncatedNormalDGP",
    "UniformSquareDGP",
    "make_dgp",
    "rng_for",
    "run_coverage_study",
    "sample_dgp",
    "truth_density",
]

MAX_FAILURE_SHARE = 0.05


def rng_for(*key: int) -> np.random.Generator:
    """Philox generator keyed by a tuple of nonnegative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def _check_box(y, x, box_y, box_x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((y < box_y[0]) | (y > box_y[1])) or np.any((x < box_x[0]) | (x > box_x[1])):
        raise ValueError("evaluation point outside the support box")
    return y, x


def _rejection(propose, accept, rng: np.random.Generator, n: int, rate: float):
    ys, xs, have = [], [], 0
    while have < n:
        m = int(math.ceil(1.2 * (n - have) / rate)) + 64
        y, x = propose(rng, m)
        keep = accept(y, x)
        ys.append(y[keep])
        xs.append(x[keep])
        have += int(keep.sum())
    return np.concatenate(ys)[:n], np.concatenate(xs)[:n]


@dataclass(frozen=True)
class TruncatedNormalDGP:
    """(Y, X) bivariate normal with mean 0, variance ``var``, covariance ``cov``,
    restricted to the box [-1, 1]^2."""

    var: float = 2.0
    cov: float = -0.1
    box: tuple = (-1.0, 1.0)
    name: str = "truncnorm"
    d: int = 1

    def __post_init__(self):
        if not abs(self.cov) < self.var:
            raise ValueError("covariance must be smaller than the variance in magnitude")

    @property
    def correlation(self) -> float:
        return self.cov / self.var

    @property
    def y_support(self):
        return self.box

    @property
    def x_support(self):
        return (self.box,)

    def acceptance_probability(self) -> float:
        lo, hi = self.box
        mvn = stats.multivariate_normal(mean=[0.0, 0.0], cov=[[self.var, self.cov], [self.cov, self.var]])
        return float(mvn.cdf([hi, hi]) - mvn.cdf([lo, hi]) - mvn.cdf([hi, lo]) + mvn.cdf([lo, lo]))

    def _propose(self, rng, m):
        chol = np.linalg.cholesky(np.array([[self.var, self.cov], [self.cov, self.var]]))
        z = rng.standard_normal((m, 2)) @ chol.T
        return z[:, 0], z[:, 1]

    def _accept(self, y, x):
        lo, hi = self.box
        return (y >= lo) & (y <= hi) & (x >= lo) & (x <= hi)

    def draw(self, rng, n):
        return _rejection(self._propose, self._accept, rng, n, 0.25)

    def truth(self, y, x, theta=0):
        lo, hi = self.box
        y, x = _check_box(y, x, self.box, self.box)
        m = self.cov / self.var * x
        s = math.sqrt(self.var - self.cov**2 / self.var)
        Z = stats.norm.cdf((hi - m) / s) - stats.norm.cdf((lo - m) / s)
        f = stats.norm.pdf((y - m) / s) / (s * Z)
        if theta == 0:
            return f
        if theta == 1:
            return -(y - m) / s**2 * f
        raise ValueError("truth available for theta in {0, 1}")


@dataclass(frozen=True)
class UniformSquareDGP:
    """(Y, X) uniform on [0, 1]^2: flat conditional density with hard edges."""

    name: str = "uniform"
    d: int = 1

    @property
    def y_support(self):
        return (0.0, 1.0)

    @property
    def x_support(self):
        return ((0.0, 1.0),)

    def draw(self, rng, n):
        u = rng.random((n, 2))
        return u[:, 0], u[:, 1]

    def truth(self, y, x, theta=0):
        y, _ = _check_box(y, x, (0.0, 1.0), (0.0, 1.0))
        if theta not in (0, 1):
            raise ValueError("truth available for theta in {0, 1}")
        return np.full(y.shape, 1.0 if theta == 0 else 0.0)


@dataclass(frozen=True)
class NormalMixtureDGP:
    """X uniform on [0, 1]; Y | X a two-component normal mixture restricted to [0, 1].

    Both component means sit at or above 1, so f(y|x) is strictly increasing
    in y on the support. The first mean shifts by ``shift * x``.
    """

    weight: float = 0.5
    means: tuple = (1.0, 1.5)
    sds: tuple = (0.5, 0.8)
    shift: float = 0.2
    name: str = "mixture"
    d: int = 1

    @property
    def y_support(self):
        return (0.0, 1.0)

    @property
    def x_support(self):
        return ((0.0, 1.0),)

    def _components(self, x):
        m1 = self.means[0] + self.shift * np.asarray(x, dtype=float)
        return (m1, self.sds[0]), (self.means[1], self.sds[1])

    def _propose(self, rng, m):
        x = rng.random(m)
        first = rng.random(m) < self.weight
        (m1, s1), (m2, s2) = self._components(x)
        z = rng.standard_normal(m)
        y = np.where(first, m1 + s1 * z, m2 + s2 * z)
        return y, x

    def draw(self, rng, n):
        return _rejection(self._propose, lambda y, x: (y >= 0) & (y <= 1), rng, n, 0.2)

    def truth(self, y, x, theta=0):
        y, x = _check_box(y, x, (0.0, 1.0), (0.0, 1.0))
        w = (self.weight, 1 - self.weight)
        num, mass = 0.0, 0.0
        for wk, (m, s) in zip(w, self._components(x)):
            z = (y - m) / s
            pdf = stats.norm.pdf(z) / s
            num = num + wk * (pdf if theta == 0 else -z / s * pdf)
            mass = mass + wk * (stats.norm.cdf((1 - m) / s) - stats.norm.cdf(-m / s))
        if theta not in (0, 1):
            raise ValueError("truth available for theta in {0, 1}")
        return num / mass


DGPS = {"truncnorm": TruncatedNormalDGP, "uniform": UniformSquareDGP, "mixture": NormalMixtureDGP}


def make_dgp(name: str):
    try:
        return DGPS[name]()
    except KeyError:
        raise ValueError(f"unknown DGP {name!r}; choose from {sorted(DGPS)}") from None


def sample_dgp(dgp, n: int, seed) -> Sample:
    """Draw n observations; ``seed`` is an int or a tuple of ints."""
    if n < 1:
        raise ValueError("n must be at least 1")
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    y, x = dgp.draw(rng_for(*key), n)
    return Sample(y, x)


def truth_density(dgp, y, x, theta: int = 0):
    """Analytic f^(theta)(y|x); scalar in, float out."""
    out = dgp.truth(y, x, theta)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GridSpec:
    """A y-grid at a single conditioning point x."""

    ys: tuple
    x: float

    @classmethod
    def linspace(cls, lo: float, hi: float, count: int, x: float) -> "GridSpec":
        return cls(tuple(np.linspace(lo, hi, count).tolist()), float(x))

    def as_grid(self):
        ys = np.asarray(self.ys, dtype=float)
        return ys, np.full((ys.size, 1), self.x)


@dataclass(frozen=True)
class StudyOptions:
    theta: int = 0
    alpha: float = 0.05
    p: int | None = None
    kernel: str = "epanechnikov"
    cov_method: str = "jackknife"
    draws: int = 2000
    bw: str | float = "rot"


METHODS = ("WBC", "RBC")
COLUMNS = ("h", "bias", "se", "pointwise_coverage", "uniform_coverage", "avg_width")


@dataclass
class MCReport:
    """Monte Carlo summary with one row per method (WBC, RBC).

    ``per_point`` holds per-grid-point means (estimate, se, pointwise
    coverage, width) for each method; ``uniform`` holds the per-replication
    uniform coverage indicators.
    """

    dgp: str
    n: int
    reps: int
    ys: np.ndarray
    x: float
    seed: int
    options: StudyOptions
    table: dict
    per_point: dict
    uniform: dict
    h: np.ndarray
    failures: dict
    wall_clock: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")

    def to_dict(self, include_clock: bool = True) -> dict:
        out = {
            "dgp": self.dgp, "n": self.n, "reps": self.reps, "x": self.x, "seed": self.seed,
            "grid": [float(v) for v in self.ys],
            "options": {k: getattr(self.options, k) for k in self.options.__dataclass_fields__},
            "table": self.table,
            "per_point": {m: {k: [float(v) for v in arr] for k, arr in d.items()}
                          for m, d in self.per_point.items()},
            "uniform": {m: [bool(v) for v in arr] for m, arr in self.uniform.items()},
            "h": [float(v) for v in self.h],
            "failures": {str(k): v for k, v in self.failures.items()},
        }
        if include_clock:
            out["wall_clock"] = self.wall_clock
        return out

    def to_json(self, include_clock: bool = True) -> str:
        return json.dumps(self.to_dict(include_clock), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("method",) + COLUMNS)
        for m in METHODS:
            w.writerow([m] + [repr(float(self.table[m][c])) for c in COLUMNS])
        return buf.getvalue()

    def format_table(self) -> str:
        head = f"{'':6}{'h':>8}{'bias':>9}{'se':>9}{'pw cov':>9}{'unif cov':>10}{'width':>9}"
        lines = [f"n={self.n} reps={self.reps} x={self.x} dgp={self.dgp}", head]
        for m in METHODS:
            r = self.table[m]
            lines.append(f"{m:6}{r['h']:8.3f}{r['bias']:9.4f}{r['se']:9.4f}"
                         f"{r['pointwise_coverage']:9.3f}{r['uniform_coverage']:10.3f}{r['avg_width']:9.4f}")
        return "\n".join(lines)


class StudyFailed(RuntimeError):
    pass


def _replication(dgp, n, grid: GridSpec, opts: StudyOptions, seed: int, rep: int):
    sample = sample_dgp(dgp, n, (seed, rep))
    ys, xs = grid.as_grid()
    truth = np.asarray(dgp.truth(ys, xs[:, 0], opts.theta), dtype=float)
    band_seed = int(np.random.SeedSequence([seed, rep, 1]).generate_state(1)[0])
    bo = BandOptions(p=opts.p, kernel=opts.kernel, bw=opts.bw, cov_method=opts.cov_method,
                     draws=opts.draws, seed=band_seed)
    h, _ = select_bandwidth(sample, grid.as_grid(), base_config(opts.theta, bo), opts.bw)
    out = {"h": h}
    for m, rbc in zip(METHODS, (False, True)):
        surf, est, _, _ = studentized_fit(sample, grid.as_grid(), opts.theta, bo, rbc=rbc, h=h)
        if not surf.usable.all():
            raise DegenerateDesign(f"{m}: grid points dropped {sorted(surf.errors)}")
        band = _band(surf, est, h, opts.alpha, bo, rbc)
        cover = (band.lower <= truth) & (truth <= band.upper)
        out[m] = {"estimate": band.estimates, "se": band.se, "cover": cover,
                  "width": band.upper - band.lower}
    out["truth"] = truth
    return out


def _run_one(args):
    try:
        return _replication(*args)
    except (DegenerateDesign, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def run_coverage_study(dgp, n: int, reps: int, grid: GridSpec, options: StudyOptions | None = None,
                       seed: int = 0, threads: int = 1) -> MCReport:
    """Pointwise and uniform coverage of WBC and RBC bands over replications.

    The bandwidth is the rule-of-thumb choice at order p. WBC estimates at
    that order, RBC at order p+1 with the same bandwidth. Failed replications
    are recorded; more than 5% failures raise StudyFailed.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    options = StudyOptions() if options is None else options
    start = time.perf_counter()
    jobs = [(dgp, n, grid, options, seed, r) for r in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    failures = {r: res["error"] for r, res in enumerate(results) if "error" in res}
    if len(failures) > MAX_FAILURE_SHARE * reps:
        raise StudyFailed(f"{len(failures)} of {reps} replications failed: {failures}")
    ok = [res for res in results if "error" not in res]
    hs = np.array([res["h"] for res in ok])
    truth = ok[0]["truth"]
    table, per_point, uniform = {}, {}, {}
    for m in METHODS:
        est = np.array([res[m]["estimate"] for res in ok])
        se = np.array([res[m]["se"] for res in ok])
        cover = np.array([res[m]["cover"] for res in ok])
        width = np.array([res[m]["width"] for res in ok])
        unif = cover.all(axis=1)
        per_point[m] = {"estimate": est.mean(0), "se": se.mean(0),
                        "coverage": cover.mean(0), "width": width.mean(0)}
        uniform[m] = unif
        table[m] = {
            "h": float(hs.mean()),
            "bias": float(np.mean(np.abs(est.mean(0) - truth))),
            "se": float(se.mean()),
            "pointwise_coverage": float(cover.mean()),
            "uniform_coverage": float(unif.mean()),
            "avg_width": float(width.mean()),
        }
    ys, _ = grid.as_grid()
    return MCReport(dgp.name, n, reps, ys, grid.x, seed, options, table, per_point, uniform, hs,
                    failures, time.perf_counter() - start)
