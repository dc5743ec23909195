"""Compression-ratio optimization at fixed rates and beams.

Two stages: an exact enumeration picks one load segment per user using
fixed segment midpoints, then a greedy pass hands the remaining
computation power to users in descending order of their delivered rate,
with a closed-form optimal ratio per user. A grid-search oracle over all
segment assignments backs the tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .comp_load import CompLoadSpec, midpoints
from .errors import InfeasibleProblem
from .scenario import Scenario


@dataclass(frozen=True)
class SegmentAssignment:
    """One-hot segment choice per user; ``segments[k]`` is in 1..D."""

    segments: tuple

    def one_hot(self, num_segments: int) -> np.ndarray:
        theta = np.zeros((len(self.segments), num_segments), dtype=int)
        for k, d in enumerate(self.segments):
            theta[k, d - 1] = 1
        return theta


@dataclass
class GreedyState:
    rates: np.ndarray          # per-user delivered rate R_k, bit/s
    order: np.ndarray          # visit order, strongest first (ties by index)
    ratios: np.ndarray
    power_ledger: list         # (user, available W, spent W) per visit


@dataclass
class GreedyResult:
    ratios: np.ndarray
    objective_bps: float
    state: GreedyState


@dataclass
class OracleResult:
    ratios: np.ndarray
    segments: tuple
    objective_bps: float


def _comp_budget(s: Scenario, transmit_power: float) -> float:
    """Computation load budget (P_max - P_tx) / p0; infinite for free computation."""
    head = s.max_power_w - transmit_power
    if s.comp_power_coeff <= 0:
        return np.inf
    return head / s.comp_power_coeff

def _interval(s: Scenario, spec: CompLoadSpec, k: int, d: int, rate: float):
    """Admissible ratio interval for user k restricted to segment d, or None."""
    cc = np.concatenate(([1.0], spec.boundaries))
    lo = max(cc[d], s.min_ratio[k])
    hi = cc[d - 1]
    cmin = s.min_semantic_rate_bps[k]
    if cmin > 0:
        hi = min(hi, rate / cmin)
    if hi < lo - 1e-15:
        return None
    return lo, min(hi, cc[d - 1])


def allowed_segments(s: Scenario, spec: CompLoadSpec, k: int, rate: float):
    """Segments whose ratio interval intersects user k's admissible range."""
    return [d for d in range(1, spec.num_segments + 1)
            if _interval(s, spec, k, d, rate) is not None]


def select_segments(s: Scenario, spec: CompLoadSpec, rates, transmit_power: float) -> SegmentAssignment:
    """Exhaustively pick the best midpoint segment assignment.

    Maximizes the sum of R_k over the segment midpoints subject to the
    midpoint power budget and the per-user rate caps; ties break toward
    the lexicographically smallest assignment.
    """
    rates = np.asarray(rates, dtype=float)
    k = s.num_users
    if transmit_power >= s.max_power_w:
        raise InfeasibleProblem("segment", ["transmit_power"],
                                "transmit power already exhausts the budget")
    mids = midpoints(spec)
    loads = spec.slopes * mids + spec.intercepts
    budget = _comp_budget(s, transmit_power)

    per_user = []
    for j in range(k):
        opts = []
        for d in allowed_segments(s, spec, j, rates[j]):
            cmin = s.min_semantic_rate_bps[j]
            if cmin > 0 and mids[d - 1] > rates[j] / cmin:
                continue
            opts.append(d)
        if not opts:
            raise InfeasibleProblem("segment", [f"user[{j}]"],
                                    f"no segment admissible for user {j}")
        per_user.append(opts)

    best = None
    for combo in itertools.product(*per_user):
        tot = sum(loads[d - 1] for d in combo)
        if tot > budget + 1e-12:
            continue
        obj = float(np.sum(rates / mids[np.array(combo) - 1]))
        key = (-obj, combo)
        if best is None or key < best[0]:
            best = (key, combo)
    if best is None:
        raise InfeasibleProblem("segment", ["midpoint_power"],
                                "no assignment fits the midpoint power budget")
    return SegmentAssignment(segments=tuple(best[1]))


def init_ratios(s: Scenario, spec: CompLoadSpec, assign: SegmentAssignment, rates) -> np.ndarray:
    """Cheapest (largest-ratio) point of each user's segment interval.

    Minimum-rate requirements cap the ratio from above; the result is
    clamped into the segment, raising when the cap undercuts the floor.
    """
    rates = np.asarray(rates, dtype=float)
    cc = np.concatenate(([1.0], spec.boundaries))
    out = np.empty(s.num_users)
    for j, d in enumerate(assign.segments):
        cmin = s.min_semantic_rate_bps[j]
        cap = rates[j] / cmin if cmin > 0 else np.inf
        value = min(cap, cc[d - 1])
        lo = max(cc[d], s.min_ratio[j])
        if value < lo - 1e-15:
            raise InfeasibleProblem("greedy", [f"min_semantic[{j}]"],
                                    f"rate cap {value:.6g} below segment floor {lo:.6g}")
        out[j] = min(max(value, lo), cc[d - 1])
    return out


def remaining_power(s: Scenario, spec: CompLoadSpec, assign: SegmentAssignment,
                    ratios, transmit_power: float, k: int) -> float:
    """Computation power left for user k once every other user is paid for."""
    ratios = np.asarray(ratios, dtype=float)
    others = 0.0
    for j, d in enumerate(assign.segments):
        if j == k:
            continue
        others += spec.slopes[d - 1] * ratios[j] + spec.intercepts[d - 1]
    return s.max_power_w - transmit_power - s.comp_power_coeff * others


def greedy_ratios(s: Scenario, spec: CompLoadSpec, assign: SegmentAssignment,
                  rates, transmit_power: float) -> GreedyResult:
    """Assign ratios user by user, strongest delivered rate first.

    Each visited user takes its segment floor when the leftover power
    covers it, otherwise the exact ratio its power share affords; results
    never rise above the initialization value.
    """
    rates = np.asarray(rates, dtype=float)
    k = s.num_users
    p0 = s.comp_power_coeff
    ratios = init_ratios(s, spec, assign, rates)
    init_total = transmit_power + sum(
        p0 * (spec.slopes[d - 1] * ratios[j] + spec.intercepts[d - 1])
        for j, d in enumerate(assign.segments))
    if init_total > s.max_power_w * (1.0 + 1e-9):
        raise InfeasibleProblem("greedy", ["total_power"],
                                f"initial ratios already need {init_total:.6g} W")

    order = np.array(sorted(range(k), key=lambda j: (-rates[j], j)))
    ledger = []
    for j in order:
        d = assign.segments[j]
        a_d = spec.slopes[d - 1]
        b_d = spec.intercepts[d - 1]
        floor = max(spec.boundaries[d - 1], s.min_ratio[j])
        p_k = remaining_power(s, spec, assign, ratios, transmit_power, j)
        if p0 <= 0:
            new = floor
        elif p0 * (a_d * floor + b_d) <= p_k:
            new = floor
        else:
            new = (p_k / p0 - b_d) / a_d
        new = min(max(new, floor), ratios[j])
        spent = p0 * (a_d * new + b_d)
        ledger.append((int(j), float(p_k), float(spent)))
        ratios[j] = new

    objective = float(np.sum(rates / ratios))
    state = GreedyState(rates=rates, order=order, ratios=ratios.copy(),
                        power_ledger=ledger)
    return GreedyResult(ratios=ratios, objective_bps=objective, state=state)


def optimize_ratios(s: Scenario, spec: CompLoadSpec, rates, transmit_power: float) -> GreedyResult:
    """Segment selection followed by the greedy pass."""
    assign = select_segments(s, spec, rates, transmit_power)
    return greedy_ratios(s, spec, assign, rates, transmit_power)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(int(np.floor((hi - lo) / step + 1e-12)), 0)
    pts = lo + step * np.arange(n + 1)
    if pts[-1] < hi - 1e-15:
        pts = np.append(pts, hi)
    else:
        pts[-1] = hi
    return pts

def brute_force_oracle(s: Scenario, spec: CompLoadSpec, rates, transmit_power: float,
                       grid_step: float = 1e-3) -> OracleResult | None:
    """Exhaustive reference: every segment assignment, every ratio grid point.

    The last user's grid coordinate is resolved analytically to the
    smallest feasible grid point given the others, which is exactly the
    product-grid maximizer because the objective falls in every ratio.
    Returns None when no grid point is feasible.
    """
    rates = np.asarray(rates, dtype=float)
    k = s.num_users
    p0 = s.comp_power_coeff
    budget = _comp_budget(s, transmit_power)
    if budget < 0:
        return None

    best_obj = -np.inf
    best = None
    for combo in itertools.product(*(allowed_segments(s, spec, j, rates[j]) for j in range(k))):
        ivals = [_interval(s, spec, j, combo[j], rates[j]) for j in range(k)]
        if any(v is None for v in ivals):
            continue
        slopes = np.array([spec.slopes[d - 1] for d in combo])
        icepts = np.array([spec.intercepts[d - 1] for d in combo])
        grids = [_grid(lo, hi, grid_step) for lo, hi in ivals]

        head_grids = grids[:-1]
        tail_grid = grids[-1]
        tail_slope, tail_icept = slopes[-1], icepts[-1]
        tail_rate = rates[-1]

        if k == 1:
            heads = [()]
        else:
            heads = itertools.product(*head_grids)
            # vectorize over the first user's grid to keep the loop shallow
        if k >= 2:
            mesh = np.meshgrid(*head_grids, indexing="ij")
            flat = np.stack([g.reshape(-1) for g in mesh], axis=0)  # (k-1, P)
            head_load = (slopes[:-1, None] * flat + icepts[:-1, None]).sum(axis=0)
            head_obj = (rates[:-1, None] / flat).sum(axis=0)
            remaining = budget - head_load
            # smallest admissible last ratio from the power headroom
            if np.isinf(budget):
                rho_min_pw = np.full(flat.shape[1], tail_grid[0])
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    rho_min_pw = (remaining - tail_icept) / tail_slope
            lo, hi = tail_grid[0], tail_grid[-1]
            idx = np.ceil((rho_min_pw - lo) / grid_step - 1e-9).astype(int)
            idx = np.clip(idx, 0, len(tail_grid) - 1)
            cand = tail_grid[np.minimum(idx, len(tail_grid) - 1)]
            feas = remaining >= tail_slope * cand + tail_icept - 1e-12
            feas &= cand <= hi + 1e-15
            if not np.any(feas):
                continue
            obj = np.where(feas, head_obj + tail_rate / cand, -np.inf)
            at = int(np.argmax(obj))
            if obj[at] > best_obj + 1e-12:
                best_obj = float(obj[at])
                best = (combo, np.append(flat[:, at], cand[at]))
        else:
            remaining = budget
            feas = tail_slope * tail_grid + tail_icept <= remaining + 1e-12
            if not np.any(feas):
                continue
            rho = tail_grid[feas][0]  # smallest feasible maximizes the objective
            obj = float(tail_rate / rho)
            if obj > best_obj + 1e-12:
                best_obj = obj
                best = (combo, np.array([rho]))

    if best is None:
        return None
    return OracleResult(ratios=best[1], segments=best[0], objective_bps=best_obj)
