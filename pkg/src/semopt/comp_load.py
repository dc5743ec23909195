"""Piecewise-linear computation-load model of semantic compression.

The load function f maps a compression ratio in [C_D, 1] to a nonnegative
computation load. It is built from D linear segments with strictly
negative slopes whose magnitudes grow as the ratio shrinks, so f is
continuous, strictly decreasing, and convex. Computation power is
``p0 * f(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_CONTINUITY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class CompLoadSpec:
    """Segment description: slopes A_d, intercepts B_d, lower boundaries C_d.

    Segment d covers (C_d, C_{d-1}] with the convention C_0 = 1; the last
    segment additionally includes its lower endpoint C_D.
    """

    slopes: np.ndarray
    intercepts: np.ndarray
    boundaries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "slopes", np.asarray(self.slopes, dtype=float))
        object.__setattr__(self, "intercepts", np.asarray(self.intercepts, dtype=float))
        object.__setattr__(self, "boundaries", np.asarray(self.boundaries, dtype=float))

    @property
    def num_segments(self) -> int:
        return len(self.slopes)

    @property
    def domain_min(self) -> float:
        """Smallest admissible ratio, C_D."""
        return float(self.boundaries[-1])


def default_spec() -> CompLoadSpec:
    """Three-segment load model shipped as the repo default."""
    return CompLoadSpec(
        slopes=np.array([-1.0, -3.0, -8.0]),
        intercepts=np.array([1.2, 2.6, 4.85]),
        boundaries=np.array([0.7, 0.45, 0.25]),
    )


def validate_spec(spec: CompLoadSpec) -> CompLoadSpec:
    """Check all structural invariants; raise with the full violation list."""
    bad = []
    a, b, c = spec.slopes, spec.intercepts, spec.boundaries
    d = len(a)
    if d < 1:
        raise ValidationError(["slopes: at least one segment required"])
    if len(b) != d or len(c) != d:
        raise ValidationError([f"intercepts/boundaries: lengths must all equal {d}"])
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(c)):
        bad.append("slopes/intercepts/boundaries: entries must be finite")
    else:
        if np.any(a >= 0):
            bad.append("slopes: all must be strictly negative")
        if np.any(b <= 0):
            bad.append("intercepts: all must be strictly positive")
        cc = np.concatenate(([1.0], c))
        if np.any(np.diff(cc) >= 0) or c[-1] <= 0:
            bad.append("boundaries: must satisfy 1 > C_1 > ... > C_D > 0")
        if np.any(np.diff(np.abs(a)) <= 0):
            bad.append("slopes: magnitudes must strictly increase across segments")
        for i in range(d - 1):
            left = a[i] * c[i] + b[i]
            right = a[i + 1] * c[i] + b[i + 1]
            scale = max(abs(left), abs(right), 1.0)
            if abs(left - right) > _CONTINUITY_RTOL * scale:
                bad.append(f"intercepts: discontinuity at boundary C_{i + 1} = {c[i]}")
        # decreasing => the minimum sits at rho = 1
        if a[0] + b[0] < -1e-15:
            bad.append("intercepts: load must be nonnegative over the whole domain")
    if bad:
        raise ValidationError(bad)
    for arr in (spec.slopes, spec.intercepts, spec.boundaries):
        arr.setflags(write=False)
    return spec


def segment_of(spec: CompLoadSpec, rho: float) -> int:
    """Segment index in 1..D hosting ``rho``; intervals are (C_d, C_{d-1}],
    and rho = C_D belongs to segment D."""
    c = spec.boundaries
    lo = spec.domain_min
    if rho < lo - 1e-15 or rho > 1.0 + 1e-15:
        raise ValueError(f"ratio {rho} outside load domain [{lo}, 1]")
    d = len(c)
    for i in range(d):
        if rho > c[i]:
            return i + 1
    return d


def load_of(spec: CompLoadSpec, rho: float) -> float:
    """Evaluate the computation load at ratio ``rho``."""
    d = segment_of(spec, rho) - 1
    return float(spec.slopes[d] * rho + spec.intercepts[d])


def power_of(spec: CompLoadSpec, rho: float, p0: float) -> float:
    """Computation power p0 * f(rho)."""
    if p0 < 0:
        raise ValueError("computation power coefficient must be nonnegative")
    return p0 * load_of(spec, rho)


def total_power(spec: CompLoadSpec, ratios, p0: float) -> float:
    """Sum of per-user computation powers."""
    return float(sum(power_of(spec, float(r), p0) for r in np.asarray(ratios, dtype=float)))


def midpoints(spec: CompLoadSpec) -> np.ndarray:
    """Representative midpoint of each segment, (C_{d-1} + C_d) / 2 with C_0 = 1."""
    cc = np.concatenate(([1.0], spec.boundaries))
    return (cc[:-1] + cc[1:]) / 2.0
