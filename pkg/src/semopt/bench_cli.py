"""Command-line harness: single runs, parameter sweeps, validation suite.

Sweep output is written as ``results.csv`` (one row per scheme/value/seed,
byte-stable across repeated invocations), ``means.csv`` (seed averages),
``timings.csv`` (wall-clock, intentionally kept out of results.csv), and a
gnuplot script over the means.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from .comp_load import CompLoadSpec
from .errors import ConfigError, InfeasibleProblem, NumericalFailure, SemoptError, ValidationError
from .orchestrator import OuterOptions, run_scheme
from .scenario import (ExperimentSpec, Scenario, apply_sweep_value, generate_channels,
                       parse_config)

RESULT_COLUMNS = (
    "scheme", "sweep_parameter", "sweep_value", "seed", "status",
    "sum_semantic_rate_bps", "user_semantic_rates_bps",
    "transmit_power_w", "computation_power_w", "outer_iterations", "detail",
)


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    sweep_parameter: str
    sweep_value: float
    seed: int
    status: str                      # ok | infeasible | numerical_failure
    sum_semantic_rate_bps: float
    user_semantic_rates_bps: tuple
    transmit_power_w: float
    computation_power_w: float
    outer_iterations: int
    detail: str
    wall_time_ms: float

    def to_csv(self) -> list:
        return [
            self.scheme, self.sweep_parameter, repr(float(self.sweep_value)),
            str(self.seed), self.status, repr(float(self.sum_semantic_rate_bps)),
            "|".join(repr(float(v)) for v in self.user_semantic_rates_bps),
            repr(float(self.transmit_power_w)), repr(float(self.computation_power_w)),
            str(self.outer_iterations), self.detail,
        ]

    @classmethod
    def from_csv(cls, row: list, wall_time_ms: float = float("nan")) -> "ResultRow":
        users = tuple(float(v) for v in row[6].split("|")) if row[6] else ()
        return cls(scheme=row[0], sweep_parameter=row[1], sweep_value=float(row[2]),
                   seed=int(row[3]), status=row[4], sum_semantic_rate_bps=float(row[5]),
                   user_semantic_rates_bps=users, transmit_power_w=float(row[7]),
                   computation_power_w=float(row[8]), outer_iterations=int(row[9]),
                   detail=row[10], wall_time_ms=wall_time_ms)


def _set_path(tree: dict, dotted: str, value):
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: '{p}' is not a section")
    node[parts[-1]] = value


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.path=value`` overrides; values are parsed as JSON when possible."""
    out = json.loads(json.dumps(raw))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, _, val = item.partition("=")
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        _set_path(out, key.strip(), parsed)
    return out


def _execute(s: Scenario, spec: CompLoadSpec, scheme: str, parameter: str,
             value: float, seed: int, opts: OuterOptions) -> ResultRow:
    t0 = time.perf_counter()
    try:
        res = run_scheme(scheme, s, spec, opts=opts)
        row = ResultRow(
            scheme=scheme, sweep_parameter=parameter, sweep_value=value, seed=seed,
            status="ok",
            sum_semantic_rate_bps=res.report.sum_semantic_rate_bps,
            user_semantic_rates_bps=tuple(float(v) for v in res.report.semantic_rates),
            transmit_power_w=res.report.transmit_power_w,
            computation_power_w=res.report.computation_power_w,
            outer_iterations=res.outer_iterations, detail="",
            wall_time_ms=(time.perf_counter() - t0) * 1e3)
    except InfeasibleProblem as e:
        row = ResultRow(scheme=scheme, sweep_parameter=parameter, sweep_value=value,
                        seed=seed, status="infeasible", sum_semantic_rate_bps=0.0,
                        user_semantic_rates_bps=(), transmit_power_w=0.0,
                        computation_power_w=0.0, outer_iterations=0,
                        detail=f"stage={e.stage} binding={','.join(e.binding)}",
                        wall_time_ms=(time.perf_counter() - t0) * 1e3)
    except NumericalFailure as e:
        row = ResultRow(scheme=scheme, sweep_parameter=parameter, sweep_value=value,
                        seed=seed, status="numerical_failure", sum_semantic_rate_bps=0.0,
                        user_semantic_rates_bps=(), transmit_power_w=0.0,
                        computation_power_w=0.0, outer_iterations=0,
                        detail=f"stage={e.stage}",
                        wall_time_ms=(time.perf_counter() - t0) * 1e3)
    return row


def _worker(task) -> ResultRow:
    raw, scheme, parameter, value, seed = task
    scenario, spec, _ = parse_config(raw, where="sweep")
    s = apply_sweep_value(scenario, parameter, value)
    s = s.with_(channels=generate_channels(s.num_users, s.num_antennas, seed))
    return _execute(s, spec, scheme, parameter, value, seed, OuterOptions())


def run_single(raw_config: dict, seed: int = None, schemes=None) -> list:
    """Run every selected scheme once on the same seeded channels."""
    scenario, spec, experiment = parse_config(raw_config, where="run")
    if schemes is None:
        schemes = experiment.schemes if experiment is not None else ("psc_rsma", "psc_sdma", "non_semantic")
    if seed is not None:
        scenario = scenario.with_(channels=generate_channels(
            scenario.num_users, scenario.num_antennas, int(seed)))
    rows = [_execute(scenario, spec, scheme, "none", 0.0, int(seed or 0), OuterOptions())
            for scheme in schemes]
    return sorted(rows, key=lambda r: (r.scheme, r.sweep_value, r.seed))


def run_sweep(experiment: ExperimentSpec, out_dir, raw_config: dict,
              jobs: int = 1) -> list:
    """Run the full (scheme, value, seed) grid and write the output files.

    Rows are computed independently and sorted before writing, so the
    CSV content does not depend on scheduling.
    """
    experiment = experiment.validated()
    tasks = [(raw_config, scheme, experiment.sweep_parameter, value, seed)
             for scheme in experiment.schemes
             for value in experiment.sweep_values
             for seed in experiment.seeds]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_worker, tasks, chunksize=1))
    else:
        rows = [_worker(t) for t in tasks]
    rows.sort(key=lambda r: (r.scheme, r.sweep_value, r.seed))
    if out_dir is not None:
        write_outputs(out_dir, rows)
    return rows


def write_outputs(out_dir, rows):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow(r.to_csv())
    with open(os.path.join(out_dir, "timings.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["scheme", "sweep_parameter", "sweep_value", "seed", "wall_time_ms"])
        for r in rows:
            w.writerow([r.scheme, r.sweep_parameter, repr(float(r.sweep_value)),
                        str(r.seed), repr(float(r.wall_time_ms))])
    means = aggregate_means(rows)
    with open(os.path.join(out_dir, "means.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["scheme", "sweep_parameter", "sweep_value", "n_ok",
                    "mean_sum_semantic_rate_bps", "mean_transmit_power_w",
                    "mean_computation_power_w"])
        for key in sorted(means):
            scheme, parameter, value = key
            m = means[key]
            w.writerow([scheme, parameter, repr(float(value)), str(m["n_ok"]),
                        repr(m["mean_sum_semantic_rate_bps"]),
                        repr(m["mean_transmit_power_w"]),
                        repr(m["mean_computation_power_w"])])
    _write_plot_script(out_dir, rows)


def aggregate_means(rows) -> dict:
    """Arithmetic means over seeds of the ok rows, keyed by (scheme, parameter, value)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.scheme, r.sweep_parameter, r.sweep_value), []).append(r)
    out = {}
    for key, rs in groups.items():
        ok = [r for r in sorted(rs, key=lambda r: r.seed) if r.status == "ok"]
        n = len(ok)
        out[key] = {
            "n_ok": n,
            "mean_sum_semantic_rate_bps":
                float(np.sum([r.sum_semantic_rate_bps for r in ok]) / n) if n else float("nan"),
            "mean_transmit_power_w":
                float(np.sum([r.transmit_power_w for r in ok]) / n) if n else float("nan"),
            "mean_computation_power_w":
                float(np.sum([r.computation_power_w for r in ok]) / n) if n else float("nan"),
        }
    return out


def _write_plot_script(out_dir, rows):
    schemes = sorted({r.scheme for r in rows})
    parameter = rows[0].sweep_parameter if rows else "value"
    lines = [
        "# gnuplot script over means.csv",
        "set datafile separator ','",
        "set key top left",
        f"set xlabel '{parameter}'",
        "set ylabel 'mean sum semantic rate (bit/s)'",
        "set grid",
    ]
    conds = []
    for scheme in schemes:
        conds.append(
            f"'means.csv' using (strcol(1) eq '{scheme}' ? column(3) : NaN):5 "
            f"with linespoints title '{scheme}'")
    lines.append("plot " + ", \\\n     ".join(conds))
    with open(os.path.join(out_dir, "plot_means.gp"), "w") as f:
        f.write("\n".join(lines) + "\n")


def _print_table(rows):
    head = f"{'scheme':<14}{'value':>12}{'seed':>6}{'status':>12}{'sum rate (bit/s)':>20}{'tx W':>10}{'comp W':>10}"
    print(head)
    print("-" * len(head))
    for r in rows:
        print(f"{r.scheme:<14}{r.sweep_value:>12.6g}{r.seed:>6}{r.status:>12}"
              f"{r.sum_semantic_rate_bps:>20.6e}{r.transmit_power_w:>10.4f}"
              f"{r.computation_power_w:>10.4f}")


def _exit_code(rows) -> int:
    if not rows:
        return 1
    if all(r.status == "numerical_failure" for r in rows):
        return 3
    if all(r.status != "ok" for r in rows):
        return 2
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semopt",
                                description="Semantic-rate resource allocation benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (JSON-parsed value)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--verbose", action="store_true")

    run = sub.add_parser("run", help="run each scheme once at the base parameters")
    common(run)
    run.add_argument("--seed", type=int, default=None, help="channel seed")

    sweep = sub.add_parser("sweep", help="run the experiment sweep from the config")
    common(sweep)
    sweep.add_argument("--seeds", default=None, metavar="A..B",
                       help="replace the seed list with an inclusive range")
    sweep.add_argument("--jobs", type=int,
                       default=int(os.environ.get("SEMOPT_JOBS", "1")),
                       help="parallel workers (default from SEMOPT_JOBS)")

    val = sub.add_parser("validate", help="run the invariant validation suite")
    val.add_argument("--level", choices=("quick", "full"), default="quick")
    val.add_argument("--out", default=None, help="write the JSON report here")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            from .validation import run_validation
            report = run_validation(args.level)
            text = json.dumps(report, indent=2, sort_keys=True)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                with open(os.path.join(args.out, "validation.json"), "w") as f:
                    f.write(text + "\n")
            print(text)
            return 0 if report["passed"] else 1

        with open(args.config) as f:
            raw = json.load(f)
        raw = apply_overrides(raw, args.set)

        if args.command == "run":
            rows = run_single(raw, seed=args.seed)
            _print_table(rows)
            if args.out:
                write_outputs(args.out, rows)
            return _exit_code(rows)

        if args.command == "sweep":
            scenario, spec, experiment = parse_config(raw, where=args.config)
            if experiment is None:
                raise ConfigError("config has no 'experiment' section to sweep")
            if args.seeds:
                lo, _, hi = args.seeds.partition("..")
                seeds = tuple(range(int(lo), int(hi) + 1))
                experiment = ExperimentSpec(
                    schemes=experiment.schemes,
                    sweep_parameter=experiment.sweep_parameter,
                    sweep_values=experiment.sweep_values, seeds=seeds,
                    scenario=scenario, comp_load=spec).validated()
            out = args.out or "sweep_out"
            rows = run_sweep(experiment, out, raw, jobs=max(1, args.jobs))
            if args.verbose:
                _print_table(rows)
            print(f"wrote {len(rows)} rows to {out}/results.csv")
            return _exit_code(rows)
    except (ConfigError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except SemoptError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: invalid JSON in config: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
