"""Command-line front end and CSV/JSON input-output.

Subcommands: estimate, bands, test-spec, test-shape, bw, simulate. Settings
come from flags, then an optional flat ``key = value`` config file, then
defaults. Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 I/O error. Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import rot_imse_h
from .covariance import covariance_surface
from .design import DegenerateDesign, Sample
from .estimator import fit_grid, min_effective_count
from .inference import BandOptions, base_config, confidence_band, select_bandwidth, shape_test, spec_test
from .simulation import GridSpec, StudyFailed, StudyOptions, make_dgp, run_coverage_study

__all__ = ["ConfigError", "RunConfig", "load_csv", "load_values", "main", "parse_grid", "read_config_file"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: missing header row") from None
        return header, [row for row in reader if row]


def _columns(header, wanted, path):
    idx = []
    for name in wanted:
        if name not in header:
            raise ConfigError(f"{path}: column {name!r} not found (have {header})")
        idx.append(header.index(name))
    return idx


def _parse(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, y_col: str = "y", x_cols=("x",)) -> tuple[Sample, int]:
    """Read a Sample from a CSV with a header row.

    Rows with a missing or non-finite value in a mapped column are dropped.
    Returns the sample and the number of dropped rows.
    """
    header, rows = _read_rows(path)
    cols = _columns(header, [y_col, *x_cols], path)
    data = np.array([[_parse(r[c]) if c < len(r) else math.nan for c in cols] for r in rows],
                    dtype=float).reshape(len(rows), len(cols))
    good = np.all(np.isfinite(data), axis=1)
    dropped = int((~good).sum())
    if dropped:
        warnings.warn(f"{path}: dropped {dropped} rows with missing or non-finite values")
    if not good.any():
        raise ConfigError(f"{path}: no usable rows")
    data = data[good]
    return Sample(data[:, 0], data[:, 1:]), dropped


def load_values(path, y_col: str = "y", x_cols=("x",), value_col: str = "value"):
    """Read (grid, value) pairs; values may be +/-inf (used as sentinels)."""
    header, rows = _read_rows(path)
    cols = _columns(header, [y_col, *x_cols, value_col], path)
    data = np.array([[_parse(r[c]) for c in cols] for r in rows], dtype=float).reshape(len(rows), len(cols))
    if data.shape[0] == 0:
        raise ConfigError(f"{path}: empty grid")
    if not np.all(np.isfinite(data[:, :-1])) or np.any(np.isnan(data[:, -1])):
        raise ConfigError(f"{path}: grid coordinates must be finite and values non-missing")
    return (data[:, 0], data[:, 1:-1]), data[:, -1]


def parse_grid(text: str) -> np.ndarray:
    """``"lo:hi:count"`` or a comma list of y values."""
    text = str(text).strip()
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            count = int(count)
            if count < 1:
                raise ConfigError("grid count must be positive")
            return np.linspace(float(lo), float(hi), count)
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {text!r}: {exc}") from None
    if not vals:
        raise ConfigError("empty grid")
    return np.asarray(vals)


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse numbers {text!r}") from exc


@dataclass
class RunConfig:
    input: str | None = None
    y_col: str = "y"
    x_cols: str = "x"
    grid: str = "0:1:20"
    x_eval: str = "0"
    theta: int = 0
    p: int | None = None
    q: int | None = None
    kernel: str = "epanechnikov"
    bw: str = "rot"
    alpha: float = 0.05
    cov_method: str = "jackknife"
    draws: int = 3000
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out: str | None = None
    rbc: bool = True
    values: str | None = None
    dgp: str = "truncnorm"
    n: int = 1000
    reps: int = 10

    def validate(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.theta < 0:
            raise ConfigError("theta must be nonnegative")
        if self.draws < 1000:
            raise ConfigError("draws must be at least 1000")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        return self

    @property
    def x_names(self) -> tuple:
        return tuple(c.strip() for c in self.x_cols.split(",") if c.strip())

    def bw_value(self):
        try:
            return float(self.bw)
        except ValueError:
            return self.bw

    def band_options(self) -> BandOptions:
        return BandOptions(p=self.p, q=self.q, kernel=self.kernel, bw=self.bw_value(), rbc=self.rbc,
                           cov_method=self.cov_method, draws=self.draws, seed=self.seed,
                           threads=self.threads)

    def grid_points(self, d: int):
        ys = parse_grid(self.grid)
        x = _floats(self.x_eval)
        if len(x) != d:
            raise ConfigError(f"x-eval has {len(x)} coordinates, data have d={d}")
        return ys, np.tile(np.asarray(x), (ys.size, 1))

    def echo(self) -> dict:
        out = asdict(self)
        out.pop("threads")
        return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _TYPES[key]
    if value.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("bool"):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; dashes in keys allowed."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=S, help="flat key = value file; flags override it")
    common.add_argument("--input", default=S)
    common.add_argument("--y-col", dest="y_col", default=S)
    common.add_argument("--x-cols", dest="x_cols", default=S, help="comma-separated")
    common.add_argument("--grid", default=S, help="lo:hi:count or comma list of y values")
    common.add_argument("--x-eval", dest="x_eval", default=S, help="comma-separated x point")
    common.add_argument("--theta", type=int, default=S)
    common.add_argument("--p", type=int, default=S)
    common.add_argument("--q", type=int, default=S)
    common.add_argument("--kernel", default=S)
    common.add_argument("--bw", default=S, help="'rot' or a positive number")
    common.add_argument("--alpha", type=float, default=S)
    common.add_argument("--cov-method", dest="cov_method", default=S)
    common.add_argument("--draws", type=int, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--out", default=S, help="output directory")
    common.add_argument("--no-rbc", dest="rbc", action="store_false", default=S)
    common.add_argument("--values", default=S, help="CSV of grid points with a 'value' column")
    common.add_argument("--dgp", default=S)
    common.add_argument("--n", type=int, default=S)
    common.add_argument("--reps", type=int, default=S)
    parser = _Parser(prog="lpcond", description="Local polynomial conditional density tools.")
    parser.add_argument("--version", action="version", version=f"lpcond {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = {}
    flags = {k: v for k, v in vars(ns).items() if k not in ("command",)}
    if "config" in flags:
        values.update(read_config_file(flags.pop("config")))
    values.update(flags)
    return RunConfig(**values).validate()


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _summary(cfg: RunConfig, started: float, **payload) -> str:
    doc = {"version": __version__, "config": cfg.echo(), "seed": cfg.seed, **payload,
           "runtime": {"wall_clock": time.perf_counter() - started, "threads": cfg.threads}}
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _emit(cfg: RunConfig, name: str, csv_text: str, summary: str, extra: dict | None = None):
    if cfg.out is None:
        sys.stdout.write(csv_text)
        return
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(csv_text)
    (out / f"{name}.json").write_text(summary + "\n")
    for fname, text in (extra or {}).items():
        (out / fname).write_text(text)


def _require_input(cfg: RunConfig):
    if cfg.input is None:
        raise ConfigError("--input is required")
    sample, dropped = load_csv(cfg.input, cfg.y_col, cfg.x_names)
    return sample, dropped


def _point_header(cfg: RunConfig, d: int) -> list:
    names = list(cfg.x_names)
    return ["y"] + (names if len(names) == d else [f"x{k + 1}" for k in range(d)])


def cmd_estimate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    sample, dropped = _require_input(cfg)
    grid = cfg.grid_points(sample.d)
    opts = cfg.band_options()
    base = base_config(cfg.theta, opts)
    h, bwinfo = select_bandwidth(sample, grid, base, opts.bw)
    est = base.with_(h=h)
    fit = fit_grid(sample, grid, est, min_effective_count(est, sample.d))
    if not fit.usable.any():
        raise DegenerateDesign(f"no usable grid points: {fit.errors}")
    surf = covariance_surface(sample, grid, est, cfg.cov_method, fit)
    se = np.sqrt(surf.var)
    rows = [[_fmt(grid[0][g])] + [_fmt(v) for v in grid[1][g]] + [_fmt(fit.values[g]), _fmt(se[g])]
            for g in range(fit.G)]
    text = _write_csv(rows, _point_header(cfg, sample.d) + ["estimate", "se"])
    summary = _summary(cfg, t0, h=h, bandwidth=bwinfo, orders=[est.p, est.q, est.mu],
                       dropped_rows=dropped, dropped_points={str(k): v for k, v in surf.errors.items()})
    _emit(cfg, "estimate", text, summary)
    return EXIT_OK


def cmd_bands(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    sample, dropped = _require_input(cfg)
    grid = cfg.grid_points(sample.d)
    res = confidence_band(sample, grid, cfg.theta, cfg.alpha, cfg.band_options())
    head = _point_header(cfg, sample.d)
    rows, plot = [], []
    for g in range(res.ys.size):
        pt = [_fmt(res.ys[g])] + [_fmt(v) for v in res.xs[g]]
        vals = [res.estimates[g], res.se[g], res.lower[g], res.upper[g]]
        rows.append(pt + [_fmt(v) for v in vals])
        if res.surface.usable[g]:
            plot.append(pt + [_fmt(res.estimates[g]), _fmt(res.lower[g]), _fmt(res.upper[g])])
    text = _write_csv(rows, head + ["estimate", "se", "lower", "upper"])
    summary = _summary(cfg, t0, cv=res.cv.value, h=res.h_used, orders=list(res.orders_used),
                       method=cfg.cov_method, rbc=res.rbc, dropped_rows=dropped,
                       dropped_points={str(k): v for k, v in res.dropped.items()})
    plot_text = _write_csv(plot, head + ["estimate", "band_lower", "band_upper"])
    _emit(cfg, "bands", text, summary, {"bands_plot.csv": plot_text})
    return EXIT_OK


def _cmd_test(cfg: RunConfig, kind: str) -> int:
    t0 = time.perf_counter()
    sample, dropped = _require_input(cfg)
    if cfg.values is None:
        raise ConfigError("--values is required for tests")
    grid, vals = load_values(cfg.values, cfg.y_col, cfg.x_names)
    if grid[1].shape[1] != sample.d:
        raise ConfigError("values file x columns do not match the data")
    fn = spec_test if kind == "spec" else shape_test
    res = fn(sample, grid, vals, cfg.alpha, cfg.theta, cfg.band_options())
    rows = [[_fmt(grid[0][g])] + [_fmt(v) for v in grid[1][g]] + [_fmt(vals[g]), _fmt(res.per_point[g])]
            for g in range(vals.size)]
    text = _write_csv(rows, _point_header(cfg, sample.d) + ["value", "t"])
    stat = res.statistic if np.isfinite(res.statistic) else str(res.statistic)
    summary = _summary(cfg, t0, test=kind, statistic=stat, cv=res.cv.value, reject=bool(res.reject),
                       p_value=res.p_value, dropped_rows=dropped,
                       dropped_points={str(k): v for k, v in res.dropped.items()})
    print(f"statistic={stat} cv={res.cv.value:.6g} reject={bool(res.reject)} p_value={res.p_value:.4g}",
          file=sys.stderr)
    _emit(cfg, f"test_{kind}", text, summary)
    return EXIT_OK


def cmd_test_spec(cfg: RunConfig) -> int:
    return _cmd_test(cfg, "spec")


def cmd_test_shape(cfg: RunConfig) -> int:
    return _cmd_test(cfg, "shape")


def cmd_bw(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    sample, dropped = _require_input(cfg)
    grid = cfg.grid_points(sample.d)
    base = base_config(cfg.theta, cfg.band_options())
    if cfg.bw_value() != "rot":
        raise ConfigError("bw command supports --bw rot only")
    res = rot_imse_h(sample, grid, base)
    text = _write_csv([[_fmt(res.h), res.case_id, res.clamped]], ["h", "case_id", "clamped"])
    summary = _summary(cfg, t0, h=res.h, case_id=res.case_id, clamped=res.clamped, dropped_rows=dropped)
    _emit(cfg, "bw", text, summary)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    dgp = make_dgp(cfg.dgp)
    x = _floats(cfg.x_eval)
    if len(x) != 1:
        raise ConfigError("simulate supports a single x coordinate")
    grid = GridSpec(tuple(parse_grid(cfg.grid).tolist()), x[0])
    opts = StudyOptions(theta=cfg.theta, alpha=cfg.alpha, p=cfg.p, kernel=cfg.kernel,
                        cov_method=cfg.cov_method, draws=cfg.draws, bw=cfg.bw_value())
    report = run_coverage_study(dgp, cfg.n, cfg.reps, grid, opts, cfg.seed, cfg.threads)
    print(report.format_table(), file=sys.stderr)
    summary = _summary(cfg, t0, report=report.to_dict(include_clock=False))
    _emit(cfg, "simulate", report.to_csv(), summary)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "bands": cmd_bands,
    "test-spec": cmd_test_spec,
    "test-shape": cmd_test_shape,
    "bw": cmd_bw,
    "simulate": cmd_simulate,
}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = resolve_config(ns)
        return COMMANDS[ns.command](cfg)
    except (DegenerateDesign, ArithmeticError, np.linalg.LinAlgError, StudyFailed) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)


if __name__ == "__main__":
    sys.exit(main())
