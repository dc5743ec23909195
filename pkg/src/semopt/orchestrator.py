"""Alternating optimization of beams/rate-split and compression ratios,
plus the two baseline schemes used in the benchmark experiments.

Each outer round first re-optimizes the rate allocation and beams at the
current ratios, then re-optimizes the ratios at the resulting rates and
transmit power. Neither block can grow the total computation budget
beyond what the incumbent ratios already spend, so the loop is launched
from a small menu of compression levels and the best run is returned.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .comp_load import CompLoadSpec, total_power
from .errors import InfeasibleProblem, NumericalFailure
from .ratio_opt import optimize_ratios
from .rsma_rates import Allocation, RateReport, private_rates, rate_report
from .sca_beamforming import ScaOptions, sca_iterate, state_from_beams
from .scenario import Scenario


@dataclass
class OuterOptions:
    tol_outer: float = 1e-4
    max_outer: int = 20
    multi_start: bool = True
    max_starts: int = 2            # compression levels tried when multi_start is on
    comp_budget_frac: float = 0.9  # computation share a start level may claim
    seed_from_sdma: bool = True    # grow the common stream out of a converged
                                   # no-common solution instead of a cold start
    sca: ScaOptions = field(default_factory=ScaOptions)


@dataclass
class OuterResult:
    allocation: Allocation
    report: RateReport
    trace: np.ndarray             # sum semantic rate after each outer round, bit/s
    outer_iterations: int
    status: str                   # converged | max_iter
    scheme: str
    stage_rows: list = field(default_factory=list)  # (outer, objective_bps, ms)
    start_level: float = float("nan")


def _start_levels(s: Scenario, spec: CompLoadSpec, opts: OuterOptions):
    """Uniform compression levels to launch the alternation from.

    Always includes no compression; adds segment floors that fit inside
    the allowed computation share, deepest (cheapest-ratio) levels first.
    """
    levels = [1.0]
    if opts.multi_start:
        cap = opts.comp_budget_frac * s.max_power_w
        floors = list(spec.boundaries)
        for level in sorted(floors):
            rho = np.maximum(level, s.min_ratio)
            if total_power(spec, rho, s.comp_power_coeff) < cap:
                levels.append(float(level))
        # keep the no-compression run plus the deepest affordable levels
        deep = sorted(levels[1:])[: opts.max_starts - 1]
        levels = [1.0] + deep
    return levels


def _ratio_block(s: Scenario, spec: CompLoadSpec, alloc: Allocation):
    """Re-optimize ratios at fixed rates and beams.

    Falls back to the incumbent ratios when the segment search cannot
    move, and never returns a worse objective than the incumbent, which
    keeps the outer trace monotone.
    """
    rates = alloc.rate_split + private_rates(s, alloc)
    tx = float(np.sum(np.abs(alloc.common_beam) ** 2)
               + np.sum(np.abs(alloc.private_beams) ** 2))
    incumbent = float(np.sum(rates / alloc.ratios))
    try:
        res = optimize_ratios(s, spec, rates, tx)
    except InfeasibleProblem:
        return alloc.ratios, incumbent
    if res.objective_bps < incumbent:
        return alloc.ratios, incumbent
    return res.ratios, float(res.objective_bps)


def _run_alternation(s: Scenario, spec: CompLoadSpec, rho0, opts: OuterOptions,
                     common_stream: bool, scheme: str,
                     init_allocation: Allocation = None) -> OuterResult:
    rho = np.asarray(rho0, dtype=float)
    alloc = init_allocation
    trace = []
    rows = []
    best = None
    status = "max_iter"
    outer = 0

    for j in range(opts.max_outer):
        outer = j + 1
        t0 = time.perf_counter()
        start = None
        if alloc is not None:
            try:
                start = state_from_beams(s, spec, rho, alloc.common_beam,
                                         alloc.private_beams, alloc.rate_split,
                                         common_stream=common_stream)
            except InfeasibleProblem:
                start = None
        sca = sca_iterate(s, spec, rho, opts=opts.sca, start=start,
                          common_stream=common_stream)
        alloc = sca.allocation
        rho_new, obj = _ratio_block(s, spec, alloc)
        rho = rho_new
        alloc = alloc.with_(ratios=rho)
        trace.append(obj)
        rows.append((j, obj, (time.perf_counter() - t0) * 1e3))
        if best is None or obj >= best[0]:
            best = (obj, alloc)
        if j >= 1 and abs(trace[-1] - trace[-2]) <= opts.tol_outer * max(1.0, abs(trace[-2])):
            status = "converged"
            break

    alloc = best[1]
    return OuterResult(allocation=alloc, report=rate_report(s, spec, alloc),
                       trace=np.asarray(trace), outer_iterations=outer,
                       status=status, scheme=scheme, stage_rows=rows,
                       start_level=float(np.max(rho0)))


def alternate(s: Scenario, spec: CompLoadSpec, opts: OuterOptions = None,
              common_stream: bool = True, scheme: str = "psc_rsma",
              init_allocation: Allocation = None,
              init_ratios: np.ndarray = None) -> OuterResult:
    """Full pipeline: alternate the two blocks until the objective settles.

    Without a pinned start the loop runs once per compression level and
    keeps the best finished run. With a common stream the default is to
    converge the no-common variant first and grow the common stream from
    that incumbent; a zero common beam is feasible here, so the result
    never falls below the no-common solution. Passing
    ``init_allocation``/``init_ratios`` pins a single warm start instead.
    """
    opts = opts or OuterOptions()
    if init_ratios is not None:
        levels = [np.asarray(init_ratios, dtype=float)]
    else:
        levels = [np.maximum(lv, s.min_ratio) for lv in _start_levels(s, spec, opts)]
        if common_stream and opts.seed_from_sdma and init_allocation is None:
            base = alternate(s, spec, opts, common_stream=False, scheme=scheme)
            try:
                run = _run_alternation(s, spec, base.allocation.ratios, opts,
                                       common_stream=True, scheme=scheme,
                                       init_allocation=base.allocation)
            except (InfeasibleProblem, NumericalFailure):
                return base
            if run.report.sum_semantic_rate_bps >= base.report.sum_semantic_rate_bps:
                return run
            return base

    best = None
    errors = []
    for rho0 in levels:
        try:
            run = _run_alternation(s, spec, rho0, opts, common_stream, scheme,
                                   init_allocation=init_allocation)
        except (InfeasibleProblem, NumericalFailure) as e:
            errors.append(e)
            continue
        score = run.report.sum_semantic_rate_bps
        if best is None or score > best[0]:
            best = (score, run)
    if best is None:
        raise errors[0] if errors else InfeasibleProblem("sca", ["unknown"], "no start level ran")
    return best[1]


def run_sdma_baseline(s: Scenario, spec: CompLoadSpec, opts: OuterOptions = None) -> OuterResult:
    """Same pipeline without a common stream: zero common beam, zero split."""
    return alternate(s, spec, opts=opts, common_stream=False, scheme="psc_sdma")


def run_nonsemantic_baseline(s: Scenario, spec: CompLoadSpec,
                             opts: OuterOptions = None) -> OuterResult:
    """No compression: unit ratios, all power to transmission.

    The compression stage is skipped entirely, so the run costs a single
    beamforming optimization and reports zero computation power.
    """
    opts = opts or OuterOptions()
    k = s.num_users
    if np.any(s.min_ratio > 1.0):
        raise InfeasibleProblem("init", ["min_ratio"], "unit ratios not admissible")
    s_free = s.with_(comp_power_coeff=0.0)
    rho = np.ones(k)
    sca = sca_iterate(s_free, spec, rho, opts=opts.sca, common_stream=True)
    alloc = sca.allocation
    report = rate_report(s_free, spec, alloc)
    obj = report.sum_semantic_rate_bps
    return OuterResult(allocation=alloc, report=report,
                       trace=np.asarray([obj]), outer_iterations=1,
                       status="converged", scheme="non_semantic",
                       stage_rows=[(0, obj, float("nan"))], start_level=1.0)


def run_scheme(scheme: str, s: Scenario, spec: CompLoadSpec,
               opts: OuterOptions = None) -> OuterResult:
    if scheme == "psc_rsma":
        return alternate(s, spec, opts=opts)
    if scheme == "psc_sdma":
        return run_sdma_baseline(s, spec, opts=opts)
    if scheme == "non_semantic":
        return run_nonsemantic_baseline(s, spec, opts=opts)
    raise ValueError(f"unknown scheme '{scheme}'")


def write_outer_trace_csv(path, result: OuterResult):
    """Dump the outer trace as CSV (outer_iter, objective_bps, stage_time_ms)."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["outer_iter", "objective_bps", "stage_time_ms"])
        for row in result.stage_rows:
            w.writerow([row[0], repr(row[1]), repr(row[2])])
