"""Experiment runner: parameter sweeps over both engines, delimited output,
optional figure rendering, and a paired analytic/Monte-Carlo verify mode.

Results are one row per (grid value, metric, engine); every analytic row
carries the truncated-series tail mass so plots expose the numerical
honesty of the evaluation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coverage, mobility, montecarlo, performance
from .association import CaseKind, case_probabilities
from .config import (
    ConfigError, NumericsPolicy, SystemConfig, config_from_dict, resolve_key,
    validate, with_params,
)

__all__ = ["SweepSpec", "run_sweep", "emit", "main", "COLUMNS"]

COLUMNS = ("sweep_param", "value", "metric", "engine", "estimate",
           "ci_lo", "ci_hi", "tail_mass", "runtime_ms", "error")

ANALYTIC_METRICS = {
    "sc": lambda cfg: coverage.total_sinr_coverage(cfg, cfg.sinr_threshold),
    "pc": lambda cfg: mobility.total_connectivity(cfg, cfg.sinr_threshold),
    "rc": lambda cfg: coverage.total_rate_coverage(cfg, cfg.rate_threshold),
    "p_local": lambda cfg: case_probabilities(cfg).local,
    "p_v2i": lambda cfg: case_probabilities(cfg).v2i,
    "p_v2v": lambda cfg: case_probabilities(cfg).v2v,
    "avg_conn_time": performance.mean_connection_time,
    "throughput": lambda cfg: performance.throughput(cfg).total,
    "delay": performance.delay,
}

MC_METRICS = {
    "sc": lambda b: montecarlo.sc_estimate(b, b.cfg.sinr_threshold),
    "pc": lambda b: montecarlo.pc_estimate(b, b.cfg.sinr_threshold),
    "rc": lambda b: montecarlo.rc_estimate(b, b.cfg.rate_threshold),
    "p_local": lambda b: montecarlo.case_estimate(b, CaseKind.LOCAL),
    "p_v2i": lambda b: montecarlo.case_estimate(b, CaseKind.V2I),
    "p_v2v": lambda b: montecarlo.case_estimate(b, CaseKind.V2V),
    "avg_conn_time": montecarlo.connection_time_estimate,
    "throughput": lambda b: montecarlo.throughput_estimate(b, "product"),
    "delay": montecarlo.delay_estimate,
}

METRIC_NAMES = tuple(ANALYTIC_METRICS)


@dataclass
class SweepSpec:
    """One experiment: a value grid for one system parameter."""

    param: str | None  # config key, possibly unit-suffixed; None = single point
    grid: list = field(default_factory=lambda: [math.nan])
    metrics: tuple = ("pc",)
    engine: str = "analytic"
    drops: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.param is not None:
            base, _ = resolve_key(self.param)
            if base is None or base not in SystemConfig.__dataclass_fields__:
                raise ConfigError([f"sweep parameter '{self.param}' is not a "
                                   "system parameter"])
        if self.param is not None:
            if not len(self.grid):
                raise ConfigError(["sweep grid must be nonempty"])
            diffs = np.diff(np.asarray(self.grid, dtype=float))
            if len(self.grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
                raise ConfigError(["sweep grid must be strictly monotone"])
        for name in self.metrics:
            if name not in ANALYTIC_METRICS:
                raise ConfigError([
                    f"unknown metric '{name}'; choose from {', '.join(METRIC_NAMES)}"
                ])
        if self.engine not in ("analytic", "mc", "both"):
            raise ConfigError(["engine must be analytic, mc, or both"])

    @property
    def engines(self):
        return ("analytic", "mc") if self.engine == "both" else (self.engine,)


def _point_config(base_cfg, spec: SweepSpec, value: float):
    if spec.param is None or math.isnan(value):
        return base_cfg
    base, conv = resolve_key(spec.param)
    converted = conv(value)
    if SystemConfig.__dataclass_fields__[base].type in ("int", int):
        converted = int(round(converted))
    return with_params(base_cfg, **{base: converted})


def _evaluate_point(base_cfg, spec: SweepSpec, value: float, trace_path=None):
    rows = []
    param_label = spec.param if spec.param is not None else "none"
    try:
        cfg = _point_config(base_cfg, spec, value)
    except ConfigError as exc:
        for engine in spec.engines:
            for metric in spec.metrics:
                rows.append(dict(
                    sweep_param=param_label, value=value, metric=metric,
                    engine=engine, estimate=math.nan, ci_lo=None, ci_hi=None,
                    tail_mass=None, runtime_ms=0.0, error=str(exc),
                ))
        return rows

    batch = None
    for engine in spec.engines:
        for metric in spec.metrics:
            t0 = time.perf_counter()
            err = ""
            est, lo, hi, tail = math.nan, None, None, None
            try:
                if engine == "analytic":
                    est = float(ANALYTIC_METRICS[metric](cfg))
                    tail = case_probabilities(cfg).tail_mass_bound
                else:
                    if batch is None:
                        batch = montecarlo.run_drops(cfg, spec.drops, spec.seed)
                        if trace_path is not None:
                            montecarlo.write_trace(batch, trace_path)
                    res = MC_METRICS[metric](batch)
                    est, lo, hi = res.value, res.ci_lo, res.ci_hi
            except Exception as exc:  # recorded in-row; the sweep continues
                err = f"{type(exc).__name__}: {exc}"
            rows.append(dict(
                sweep_param=param_label, value=value, metric=metric,
                engine=engine, estimate=est, ci_lo=lo, ci_hi=hi,
                tail_mass=tail, runtime_ms=(time.perf_counter() - t0) * 1e3,
                error=err,
            ))
    return rows


def _worker_count(requested: int | None) -> int:
    cap = os.environ.get("MMV2X_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    want = requested if requested else cap
    return max(1, min(want, cap))


def run_sweep(base_cfg, spec: SweepSpec, jobs: int | None = None,
              trace_stem=None):
    """Evaluate every grid point x metric x engine; rows are ordered by
    grid index regardless of worker completion order."""
    points = list(spec.grid)
    traces = [None] * len(points)
    if trace_stem is not None:
        traces = [
            Path(f"{trace_stem}_{i}.trace") if len(points) > 1 else Path(f"{trace_stem}.trace")
            for i in range(len(points))
        ]
    workers = _worker_count(jobs)
    if workers <= 1 or len(points) <= 1:
        results = [_evaluate_point(base_cfg, spec, v, t)
                   for v, t in zip(points, traces)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda iv: _evaluate_point(base_cfg, spec, iv[0], iv[1]),
                zip(points, traces),
            ))
    return [row for rows in results for row in rows]


def emit(rows, path, fmt: str = "csv", cfg=None) -> Path:
    """Write the result table as CSV or JSON (JSON embeds the resolved
    config for provenance)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _csv_cell(row.get(k)) for k in COLUMNS})
    elif fmt == "json":
        doc = {"rows": rows}
        if cfg is not None:
            doc["config"] = {
                k: getattr(cfg, k) for k in SystemConfig.__dataclass_fields__
            }
            doc["numerics"] = {
                k: getattr(cfg.numerics, k)
                for k in NumericsPolicy.__dataclass_fields__
            }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, default=_json_cell)
    else:
        raise ValueError("format must be csv or json")
    return path


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_cell(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v)}")


def parse_rows(path):
    """Read back a CSV written by :func:`emit` with typed cells."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = dict(raw)
            for key in ("value", "estimate", "ci_lo", "ci_hi", "tail_mass",
                        "runtime_ms"):
                row[key] = float(row[key]) if row[key] not in ("", None) else None
            rows.append(row)
    return rows


# probability-valued metrics compare absolutely; scale-bearing ones
# (bits, seconds, slots) compare relatively against the same tolerance
_PROBABILITY_METRICS = frozenset(
    ("sc", "pc", "rc", "p_local", "p_v2i", "p_v2v"))


def verify_rows(rows, tol: float):
    """Pair analytic/mc rows and list the points that drift past ``tol``
    (absolute for probabilities, relative otherwise)."""
    table = {}
    for row in rows:
        if row["error"]:
            continue
        table.setdefault((row["metric"], row["value"]), {})[row["engine"]] = row["estimate"]
    breaches = []
    for (metric, value), pair in sorted(table.items(), key=lambda kv: str(kv[0])):
        if "analytic" in pair and "mc" in pair:
            gap = abs(pair["analytic"] - pair["mc"])
            if metric not in _PROBABILITY_METRICS:
                gap /= max(abs(pair["analytic"]), abs(pair["mc"]), 1e-300)
            if not math.isfinite(gap) or gap > tol:
                breaches.append((metric, value, pair["analytic"], pair["mc"], gap))
    return breaches


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mmv2x",
        description="Sweep cache-enabled mmWave V2X performance metrics "
                    "(closed-form engine, Monte Carlo engine, or both).",
    )
    parser.add_argument("--config", help="JSON config file (may embed a sweep)")
    parser.add_argument("--sweep", help="param=lo:hi:steps over a system parameter")
    parser.add_argument("--metric", help="comma-separated metric names "
                        f"({', '.join(METRIC_NAMES)})")
    parser.add_argument("--engine", choices=("analytic", "mc", "both"))
    parser.add_argument("--drops", type=int, help="Monte Carlo drops per grid point")
    parser.add_argument("--seed", type=int, help="Monte Carlo seed")
    parser.add_argument("--out", help="output file (default: stdout CSV)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--verify", action="store_true",
                        help="compare paired engines; nonzero exit on breach")
    parser.add_argument("--tol", type=float, default=0.03,
                        help="tolerance for --verify (absolute for "
                        "probability metrics, relative otherwise)")
    parser.add_argument("--figures", metavar="DIR",
                        help="render one PNG per metric into DIR")
    parser.add_argument("--trace", metavar="STEM",
                        help="write per-drop trace files next to STEM")
    parser.add_argument("--jobs", type=int, help="worker pool size "
                        "(MMV2X_THREADS caps it)")
    return parser


def _sweep_from_args(args, doc_sweep):
    fields_ = dict(doc_sweep or {})
    if args.sweep:
        try:
            param, rng = args.sweep.split("=", 1)
            lo, hi, steps = rng.split(":")
            fields_["param"] = param
            fields_["lo"], fields_["hi"], fields_["steps"] = float(lo), float(hi), int(steps)
            fields_.pop("grid", None)
        except ValueError:
            raise ConfigError(["--sweep expects param=lo:hi:steps"]) from None
    if args.metric:
        fields_["metrics"] = [m.strip() for m in args.metric.split(",") if m.strip()]
    if args.engine:
        fields_["engine"] = args.engine
    if args.drops is not None:
        fields_["drops"] = args.drops
    if args.seed is not None:
        fields_["seed"] = args.seed
    if args.verify:
        fields_["engine"] = "both"

    if "grid" in fields_:
        grid = [float(v) for v in fields_["grid"]]
    elif "param" in fields_ and fields_["param"] is not None:
        steps = int(fields_.get("steps", 11))
        if steps < 1:
            raise ConfigError(["sweep needs steps >= 1"])
        lo = float(fields_.get("lo", 0.0))
        hi = float(fields_.get("hi", lo))
        grid = [lo] if steps == 1 else list(np.linspace(lo, hi, steps))
    else:
        grid = [math.nan]
    return SweepSpec(
        param=fields_.get("param"),
        grid=grid,
        metrics=tuple(fields_.get("metrics", ("pc",))),
        engine=fields_.get("engine", "analytic"),
        drops=fields_.get("drops"),
        seed=fields_.get("seed"),
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        doc = {}
        if args.config:
            doc = json.loads(Path(args.config).read_text())
        doc_sweep = doc.pop("sweep", None)
        sys_cfg, policy = config_from_dict(doc)
        cfg = validate(sys_cfg, policy)
        spec = _sweep_from_args(args, doc_sweep)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    rows = run_sweep(cfg, spec, jobs=args.jobs, trace_stem=args.trace)

    if args.out:
        emit(rows, args.out, args.format, cfg=cfg)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row.get(k)) for k in COLUMNS})

    if args.figures:
        from . import report

        stem = Path(args.out).stem if args.out else "sweep"
        report.render_results(rows, args.figures, stem)

    hard_errors = [r for r in rows if r["error"]]
    if hard_errors:
        for row in hard_errors:
            print(f"error at {row['sweep_param']}={row['value']} "
                  f"[{row['metric']}/{row['engine']}]: {row['error']}",
                  file=sys.stderr)

    if args.verify:
        breaches = verify_rows(rows, args.tol)
        for metric, value, ana, mc, gap in breaches:
            print(f"verify FAIL {metric} at {value}: analytic={ana:.4f} "
                  f"mc={mc:.4f} |gap|={gap:.4f} > {args.tol}", file=sys.stderr)
        if breaches:
            return 1
        print(f"verify OK: every paired point within {args.tol}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
