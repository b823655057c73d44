"""Command-line experiment harness: rate tables, oracles, Monte Carlo, plots.

Exit codes: 0 success, 2 invalid input, 3 optimizer did not converge
(output is still written, with the flag recorded).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from . import __version__
from .bandwidth import BandwidthQuery, critical_time, rate_table
from .queue_sim import fluid_workload, simulate, workload_path, offered_load_path
from .rare_event import (
    QueueTemplate,
    TailQuery,
    exact_os_tail,
    heuristic_tilts,
    is_workload_tail,
    ldp_slope,
    mc_workload_tail,
)
from .rate_path import UPPER_BOUND_ONLY, PathOptimizerConfig, rate_workload
from .rate_pointwise import Partition, rate_increments, rate_offered, rate_os
from .stochastic_core import (
    ArrivalModel,
    Deterministic,
    Empirical,
    Exponential,
    Gamma,
    RngSpec,
    ServiceModel,
)

OUTPUT_ENV = "RSGI1_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3

RATE_HEADER = ("t", "x_or_y", "rate", "argmin", "residual")
MC_HEADER = ("n", "t", "threshold", "method", "p_hat", "ci_lo", "ci_hi", "reps", "theta1",
             "theta2")
SLOPE_HEADER = ("n", "neg_log_p_over_n", "rate_ref", "gap")

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "arrival": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["uniform", "power"]},
                "params": {"type": "object", "additionalProperties": False,
                           "properties": {"k": {"type": "number", "exclusiveMinimum": 0}}},
            },
        },
        "service": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exponential", "gamma", "deterministic", "empirical"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mean": {"type": "number", "exclusiveMinimum": 0},
                        "rate": {"type": "number", "exclusiveMinimum": 0},
                        "shape": {"type": "number", "exclusiveMinimum": 0},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "value": {"type": "number", "exclusiveMinimum": 0},
                        "atoms": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        "weights": {"type": "array", "items": {"type": "number"},
                                    "minItems": 1},
                    },
                },
            },
        },
        "n_list": {"type": "array", "items": _POS_INT, "minItems": 1},
        "t": {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]},
        "thresholds": {"type": "array", "items": _NUM, "minItems": 1},
        "reps": _POS_INT,
        "seed": {"type": "integer", "minimum": 0},
        "grid_m": {"type": "integer", "minimum": 10},
        "multistart": _POS_INT,
        "output_dir": {"type": "string"},
    },
}


class ValidationFailure(Exception):
    pass


# -- configuration --------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationFailure(f"cannot read config {path}: {exc}") from exc
    validate_config(doc)
    return doc


def validate_config(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ValidationFailure(f"config error at {err.json_path}: {err.message}")


def build_service(spec: dict | None) -> ServiceModel:
    spec = spec or {"kind": "exponential", "params": {"mean": 1.0}}
    kind, p = spec["kind"], spec.get("params", {})
    try:
        if kind == "exponential":
            if "rate" in p:
                return Exponential(float(p["rate"]))
            return Exponential.with_mean(float(p.get("mean", 1.0)))
        if kind == "gamma":
            return Gamma(float(p.get("shape", 1.0)), float(p.get("scale", 1.0)))
        if kind == "deterministic":
            return Deterministic(float(p.get("value", 1.0)))
        return Empirical(tuple(map(float, p["atoms"])), tuple(map(float, p["weights"])))
    except (KeyError, ValueError) as exc:
        raise ValidationFailure(f"config error at $.service.params: {exc}") from exc


def build_arrival(spec: dict | None) -> ArrivalModel:
    if not spec or spec["kind"] == "uniform":
        return ArrivalModel.uniform()
    return ArrivalModel.power(float(spec.get("params", {}).get("k", 1.0)))


# -- output ---------------------------------------------------------------------

def cell(v) -> str:
    if v is None:
        return "inf"
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        raise ValueError("refusing to write NaN")
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([cell(v) for v in row])
    write_atomic(path, buf.getvalue())
    return path


# -- plotting -------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b",
           "#e377c2")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_svg(series: dict[str, list[tuple[float, float]]], x_label: str, y_label: str,
               title: str = "") -> str:
    """Polylines on linear axes in an 800x600 view box, one legend entry per series."""
    width, height = 800, 600
    left, right, top, bottom = 80, 160, 40, 60
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValidationFailure("nothing finite to plot")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for tx in _ticks(x0, x1):
        out.append(f'<text x="{sx(tx):.2f}" y="{top + ph + 20}" font-size="12" '
                   f'text-anchor="middle">{tx:.3g}</text>')
    for ty in _ticks(y0, y1):
        out.append(f'<text x="{left - 8}" y="{sy(ty) + 4:.2f}" font-size="12" '
                   f'text-anchor="end">{ty:.3g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 15}" font-size="14" '
               f'text-anchor="middle">{x_label}</text>')
    out.append(f'<text x="20" y="{top + ph / 2}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 20 {top + ph / 2})">{y_label}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="24" font-size="16" '
                   f'text-anchor="middle">{title}</text>')
    for i, (name, s) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in sorted(s))
        out.append(f'<polyline class="series" data-name="{name}" fill="none" '
                   f'stroke="{colour}" stroke-width="2" points="{coords}"/>')
        ly = top + 20 * i + 10
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 45}" y="{ly + 4}" font-size="12">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_series(path: Path, x: str, y: str, group: str | None) -> dict[str, list]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in (x, y) + ((group,) if group else ()):
            if c not in cols:
                raise ValidationFailure(f"column {c!r} not in {path} (has {cols})")
        series: dict[str, list] = {}
        for row in reader:
            xv, yv = float(row[x]), float(row[y])
            if not (math.isfinite(xv) and math.isfinite(yv)):
                continue
            key = f"{group}={row[group]}" if group else y
            series.setdefault(key, []).append((xv, yv))
    return series


# -- argument parsing ---------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            return [float(v) for v in np.linspace(float(lo), float(hi), int(count))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationFailure(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    common.add_argument("--out", help="output file name inside the output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--m", type=int, help="path grid segments")
    common.add_argument("--multistart", type=int)

    p = _Parser(prog="rsgi1", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rsgi1 {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="workload path with fluid overlay")
    s.add_argument("--n", type=int)

    r = sub.add_parser("rate", help="rate tables")
    rsub = r.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    ro = rsub.add_parser("os", parents=[common])
    ro.add_argument("--t", type=_floats, required=True)
    ro.add_argument("--x", type=_floats, required=True)
    rf = rsub.add_parser("offered", parents=[common])
    rf.add_argument("--t", type=_floats, required=True)
    rf.add_argument("--y", type=_floats, required=True)
    rf.add_argument("--convention", choices=("literal", "corrected"), default="literal")
    rw = rsub.add_parser("workload", parents=[common])
    rw.add_argument("--t", type=_floats)
    rw.add_argument("--y", type=_floats)
    ri = rsub.add_parser("increments", parents=[common])
    ri.add_argument("--points", type=_floats, required=True)
    ri.add_argument("--y", type=_floats, required=True)

    o = sub.add_parser("oracle", help="exact oracles")
    osub = o.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    ot = osub.add_parser("os-tail", parents=[common])
    ot.add_argument("--n", type=_ints, required=True)
    ot.add_argument("--t", type=float, required=True)
    ot.add_argument("--a", type=float, required=True)

    mc = sub.add_parser("mc", help="Monte Carlo estimates")
    msub = mc.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    mt = msub.add_parser("tail", parents=[common])
    mt.add_argument("--n", type=_ints)
    mt.add_argument("--t", type=float)
    mt.add_argument("--w", type=_floats)
    mt.add_argument("--reps", type=int)
    mt.add_argument("--method", choices=("naive", "is", "both"), default="naive")
    mt.add_argument("--theta1", type=float)
    mt.add_argument("--theta2", type=float)
    mt.add_argument("--theta3", type=float)

    ls = sub.add_parser("ldp-slope", parents=[common])
    ls.add_argument("--n", type=_ints)
    ls.add_argument("--t", type=float)
    ls.add_argument("--a", type=float)
    ls.add_argument("--source", choices=("exact", "mc", "is"), default="exact")
    ls.add_argument("--reps", type=int)

    bw = sub.add_parser("bandwidth", parents=[common])
    bw.add_argument("--w", type=float)
    bw.add_argument("--p", type=float, required=True)
    bw.add_argument("--n", type=int)
    bw.add_argument("--t-grid", type=_floats)

    pl = sub.add_parser("plot", parents=[common])
    pl.add_argument("--input", required=True)
    pl.add_argument("--xcol", required=True)
    pl.add_argument("--ycol", required=True)
    pl.add_argument("--group")
    pl.add_argument("--title", default="")
    return p


# -- subcommands -------------------------------------------------------------------

class Context:
    def __init__(self, args, cfg: dict):
        self.args = args
        self.cfg = cfg
        out = args.output_dir or cfg.get("output_dir") or os.environ.get(OUTPUT_ENV) or "results"
        self.out_dir = Path(out)
        self.seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        m = args.m if args.m is not None else cfg.get("grid_m", 200)
        ms = args.multistart if args.multistart is not None else cfg.get("multistart", 8)
        try:
            self.path_cfg = PathOptimizerConfig(m=m, multistart=ms, seed=self.seed)
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from exc
        self.service = build_service(cfg.get("service"))
        self.arrival = build_arrival(cfg.get("arrival"))

    def pick(self, flag, key, default=None):
        if flag is not None:
            return flag
        if key in self.cfg:
            return self.cfg[key]
        if default is None:
            raise ValidationFailure(f"missing value for {key!r} (flag or config)")
        return default

    def target(self, default: str) -> Path:
        return self.out_dir / (self.args.out or default)


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def cmd_simulate(ctx: Context) -> int:
    n = ctx.args.n if ctx.args.n is not None else ctx.pick(None, "n_list", [100])[0]
    q = simulate(n, ctx.arrival, ctx.service, RngSpec(ctx.seed))
    wp, xp = workload_path(q), offered_load_path(q)
    fluid = fluid_workload(ctx.arrival, 1.0 / ctx.service.mean, wp.grid)
    rows = [(n, s, w, x, f) for s, w, x, f in zip(wp.grid, wp.values, xp.values, fluid.values)]
    write_csv(ctx.target(f"simulate_n{n}.csv"),
              ("n", "t", "workload", "offered_load", "fluid_workload"), rows)
    return EXIT_OK


def _rate_row(t, z, rv) -> tuple:
    arg = rv.optimizer if isinstance(rv.optimizer, (int, float)) else None
    return (t, z, rv.value, arg, rv.residual)


def cmd_rate(ctx: Context) -> int:
    a, kind = ctx.args, ctx.args.kind
    rows, status = [], EXIT_OK
    if kind == "os":
        for t in a.t:
            for x in a.x:
                rows.append((t, x, rate_os(t, x).value, x, 0.0))
    elif kind == "offered":
        for t in a.t:
            for y in a.y:
                rows.append(_rate_row(t, y, rate_offered(t, y, ctx.service,
                                                         convention=a.convention)))
    elif kind == "workload":
        ts = a.t if a.t is not None else _as_list(ctx.pick(None, "t"))
        ys = a.y if a.y is not None else _as_list(ctx.pick(None, "thresholds"))
        for t in ts:
            for y in ys:
                rv = rate_workload(t, y, ctx.service, ctx.path_cfg)
                if UPPER_BOUND_ONLY in rv.flags:
                    status = EXIT_NONCONVERGED
                rows.append((t, y, rv.value, None, rv.residual))
    else:
        try:
            part = Partition(a.points[-1], tuple(a.points))
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from exc
        if len(a.y) != len(a.points):
            raise ValidationFailure("--y needs one increment per partition point")
        rv = rate_increments(part, a.y)
        rows.append((part.t, float(sum(a.y)), rv.value, None, 0.0))
    write_csv(ctx.target(f"rate_{kind}.csv"), RATE_HEADER, rows)
    return status


def cmd_oracle(ctx: Context) -> int:
    a = ctx.args
    rows = []
    for n in a.n:
        r = exact_os_tail(n, a.t, a.a)
        rows.append((n, a.t, a.a, r.p, r.log_p))
    write_csv(ctx.target("oracle_os_tail.csv"), ("n", "t", "a", "p", "log_p"), rows)
    return EXIT_OK


def cmd_mc(ctx: Context) -> int:
    a = ctx.args
    ns = a.n if a.n is not None else ctx.pick(None, "n_list")
    t = a.t if a.t is not None else _as_list(ctx.pick(None, "t"))[0]
    ws = a.w if a.w is not None else ctx.pick(None, "thresholds")
    reps = a.reps if a.reps is not None else ctx.pick(None, "reps", 10_000)
    methods = ("naive", "is") if a.method == "both" else (a.method,)
    rows = []
    for n in ns:
        q = QueueTemplate(n, ctx.arrival, ctx.service)
        for w in ws:
            for method in methods:
                spec = RngSpec(ctx.seed, n)
                if method == "naive":
                    est = mc_workload_tail(q, t, w, reps, spec)
                    th1 = th2 = 0.0
                else:
                    th1, th2, th3 = a.theta1, a.theta2, a.theta3
                    if th1 is None or th2 is None:
                        choice = heuristic_tilts(t, w, ctx.service)
                        th1 = choice.theta1 if th1 is None else th1
                        th2 = choice.theta2 if th2 is None else th2
                        th3 = choice.theta3 if th3 is None else th3
                    try:
                        est = is_workload_tail(q, t, w, th1, th2, reps, spec, theta3=th3 or 0.0)
                    except ValueError as exc:
                        raise ValidationFailure(str(exc)) from exc
                rows.append((n, t, w, method, est.p_hat, est.ci[0], est.ci[1], reps, th1, th2))
    write_csv(ctx.target("mc_tail.csv"), MC_HEADER, rows)
    return EXIT_OK


def cmd_ldp_slope(ctx: Context) -> int:
    a = ctx.args
    ns = a.n if a.n is not None else ctx.pick(None, "n_list")
    t = a.t if a.t is not None else _as_list(ctx.pick(None, "t"))[0]
    x = a.a if a.a is not None else ctx.pick(None, "thresholds")[0]
    reps = a.reps if a.reps is not None else ctx.pick(None, "reps", 100_000)
    try:
        rep = ldp_slope([TailQuery(n, t, x) for n in ns], a.source, reps=reps,
                        rng=RngSpec(ctx.seed))
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    rows = [(r.n, r.neg_log_p_over_n, r.rate_ref, r.gap) for r in rep.rows]
    write_csv(ctx.target("ldp_slope.csv"), SLOPE_HEADER, rows)
    return EXIT_OK


def cmd_bandwidth(ctx: Context) -> int:
    a = ctx.args
    w = a.w if a.w is not None else ctx.pick(None, "thresholds")[0]
    n = a.n if a.n is not None else ctx.pick(None, "n_list")[0]
    grid = a.t_grid if a.t_grid is not None else _as_list(ctx.pick(None, "t"))
    try:
        q = BandwidthQuery(w, a.p, n, tuple(grid), ctx.service, ctx.path_cfg)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    res = critical_time(q, rate_table(q.t_grid, q.w, q.n, q.model, q.cfg))
    rows = [(r.t, r.rate, r.bound, r.residual, UPPER_BOUND_ONLY in r.flags, res.t_star)
            for r in res.rows]
    write_csv(ctx.target("bandwidth.csv"),
              ("t", "rate", "bound", "residual", "upper_bound_only", "t_star"), rows)
    return EXIT_NONCONVERGED if any(UPPER_BOUND_ONLY in r.flags for r in res.rows) else EXIT_OK


def cmd_plot(ctx: Context) -> int:
    a = ctx.args
    series = read_series(Path(a.input), a.xcol, a.ycol, a.group)
    svg = render_svg(series, a.xcol, a.ycol, a.title)
    write_atomic(ctx.target(Path(a.input).with_suffix(".svg").name), svg)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "rate": cmd_rate,
    "oracle": cmd_oracle,
    "mc": cmd_mc,
    "ldp-slope": cmd_ldp_slope,
    "bandwidth": cmd_bandwidth,
    "plot": cmd_plot,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        ctx = Context(args, load_config(args.config))
        return COMMANDS[args.command](ctx)
    except (ValidationFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
