"""Rate and power bookkeeping for the rate-splitting downlink.

Every user decodes the shared common stream first, removes it, then
decodes its own private stream. Semantic rates divide the delivered
bit rate by the per-user compression ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .comp_load import CompLoadSpec, total_power
from .scenario import Scenario

LN2 = float(np.log(2.0))


@dataclass(frozen=True, eq=False)
class Allocation:
    """One candidate solution: beams, common-rate split, compression ratios."""

    common_beam: np.ndarray    # (M,) complex
    private_beams: np.ndarray  # (K, M) complex
    rate_split: np.ndarray     # (K,) bit/s
    ratios: np.ndarray         # (K,) in (0, 1]

    def __post_init__(self):
        object.__setattr__(self, "common_beam", np.asarray(self.common_beam, dtype=complex))
        object.__setattr__(self, "private_beams", np.asarray(self.private_beams, dtype=complex))
        object.__setattr__(self, "rate_split", np.asarray(self.rate_split, dtype=float))
        object.__setattr__(self, "ratios", np.asarray(self.ratios, dtype=float))

    def with_(self, **kwargs) -> "Allocation":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class RateReport:
    common_rates: np.ndarray      # per-user common-stream decode rate, bit/s
    min_common_rate: float        # worst user's common-stream rate, bit/s
    private_rates: np.ndarray     # per-user private-stream rate, bit/s
    semantic_rates: np.ndarray    # per-user effective delivered rate, bit/s
    transmit_power_w: float
    computation_power_w: float
    total_power_w: float

    @property
    def sum_semantic_rate_bps(self) -> float:
        return float(np.sum(self.semantic_rates))


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    slacks: dict  # label -> (signed slack, scale); negative slack = violated


def _check_dims(s: Scenario, alloc: Allocation):
    k, m = s.num_users, s.num_antennas
    if alloc.common_beam.shape != (m,):
        raise ValueError(f"common_beam: expected shape ({m},)")
    if alloc.private_beams.shape != (k, m):
        raise ValueError(f"private_beams: expected shape ({k}, {m})")
    if alloc.rate_split.shape != (k,) or alloc.ratios.shape != (k,):
        raise ValueError(f"rate_split/ratios: expected length {k}")


def _gains(s: Scenario, alloc: Allocation):
    """|h_k^H w_j|^2 for all users k and beams j (column 0 = common)."""
    w = np.concatenate([alloc.common_beam[None, :], alloc.private_beams], axis=0)
    amps = s.channels @ w.T  # (K, K+1); channels rows are already h_k^H
    return np.abs(amps) ** 2


def common_rate(s: Scenario, alloc: Allocation, k: int) -> float:
    """Rate at which user k can decode the common stream, bit/s."""
    _check_dims(s, alloc)
    g = _gains(s, alloc)
    denom = np.sum(g[k, 1:]) + s.noise_power_w
    return s.bandwidth_hz * np.log1p(g[k, 0] / denom) / LN2


def private_rate(s: Scenario, alloc: Allocation, k: int) -> float:
    """Rate of user k's private stream after the common stream is removed, bit/s."""
    _check_dims(s, alloc)
    g = _gains(s, alloc)
    denom = np.sum(g[k, 1:]) - g[k, k + 1] + s.noise_power_w
    return s.bandwidth_hz * np.log1p(g[k, k + 1] / denom) / LN2


def common_rates(s: Scenario, alloc: Allocation) -> np.ndarray:
    _check_dims(s, alloc)
    g = _gains(s, alloc)
    denom = np.sum(g[:, 1:], axis=1) + s.noise_power_w
    return s.bandwidth_hz * np.log1p(g[:, 0] / denom) / LN2


def private_rates(s: Scenario, alloc: Allocation) -> np.ndarray:
    _check_dims(s, alloc)
    g = _gains(s, alloc)
    sig = np.diagonal(g[:, 1:])
    denom = np.sum(g[:, 1:], axis=1) - sig + s.noise_power_w
    return s.bandwidth_hz * np.log1p(sig / denom) / LN2


def min_common_rate(s: Scenario, alloc: Allocation) -> float:
    """Worst-user common-stream rate; limits the total common-rate split."""
    return float(np.min(common_rates(s, alloc)))


def semantic_rates(s: Scenario, alloc: Allocation) -> np.ndarray:
    """Per-user delivered semantic rate (a_k + r_k) / rho_k, bit/s."""
    if np.any(alloc.ratios <= 0):
        raise ValueError("ratios must be strictly positive")
    return (alloc.rate_split + private_rates(s, alloc)) / alloc.ratios


def power_usage(s: Scenario, spec: CompLoadSpec, alloc: Allocation):
    """(transmit W, computation W, total W) of an allocation."""
    _check_dims(s, alloc)
    tx = float(np.sum(np.abs(alloc.common_beam) ** 2)
               + np.sum(np.abs(alloc.private_beams) ** 2))
    comp = total_power(spec, alloc.ratios, s.comp_power_coeff)
    return tx, comp, tx + comp


def rate_report(s: Scenario, spec: CompLoadSpec, alloc: Allocation) -> RateReport:
    rc = common_rates(s, alloc)
    tx, comp, tot = power_usage(s, spec, alloc)
    return RateReport(
        common_rates=rc,
        min_common_rate=float(np.min(rc)),
        private_rates=private_rates(s, alloc),
        semantic_rates=semantic_rates(s, alloc),
        transmit_power_w=tx,
        computation_power_w=comp,
        total_power_w=tot,
    )


def check_feasibility(s: Scenario, spec: CompLoadSpec, alloc: Allocation,
                      tol: float = 1e-8) -> FeasibilityReport:
    """Evaluate every constraint of the full problem with signed slacks.

    Power slacks are judged relative to the power budget, rate slacks
    relative to the bandwidth, ratio bounds on the unit scale. Verdict is
    true iff every slack >= -tol * scale.
    """
    _check_dims(s, alloc)
    tx, comp, tot = power_usage(s, spec, alloc)
    r0c = min_common_rate(s, alloc)
    c = semantic_rates(s, alloc)
    slacks = {
        "total_power": (s.max_power_w - tot, s.max_power_w),
        "common_rate_split": (r0c - float(np.sum(alloc.rate_split)), s.bandwidth_hz),
    }
    for k in range(s.num_users):
        slacks[f"rate_split_nonneg[{k}]"] = (float(alloc.rate_split[k]), s.bandwidth_hz)
        slacks[f"ratio_lower[{k}]"] = (float(alloc.ratios[k] - s.min_ratio[k]), 1.0)
        slacks[f"ratio_upper[{k}]"] = (float(1.0 - alloc.ratios[k]), 1.0)
        slacks[f"min_semantic[{k}]"] = (float(c[k] - s.min_semantic_rate_bps[k]), s.bandwidth_hz)
    ok = all(v >= -tol * scale for v, scale in slacks.values())
    return FeasibilityReport(feasible=ok, slacks=slacks)
