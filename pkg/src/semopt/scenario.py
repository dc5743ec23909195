"""System parameters, channel generation, and configuration loading.

A :class:`Scenario` bundles everything that stays fixed during one
optimization run: user/antenna counts, bandwidth, noise and power budgets,
per-user service requirements, and the channel matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .comp_load import CompLoadSpec, validate_spec
from .errors import ConfigError, ValidationError

SCHEMES = ("psc_rsma", "psc_sdma", "non_semantic")
SWEEP_PARAMETERS = ("comp_power_coeff", "max_power_dbm", "bandwidth_hz", "noise_power_dbm")


def dbm_to_watts(dbm: float) -> float:
    """Convert dBm to Watts; 30 dBm maps to exactly 1 W."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * np.log10(watts) + 30.0


@dataclass(frozen=True, eq=False)
class Scenario:
    """Fixed system data consumed by every optimization stage.

    ``channels`` holds one row per user; row k is the conjugate-transposed
    channel of user k, so received amplitudes are ``channels[k] @ w``.
    """

    num_users: int
    num_antennas: int
    bandwidth_hz: float
    noise_power_w: float
    max_power_w: float
    comp_power_coeff: float
    min_semantic_rate_bps: np.ndarray
    min_ratio: np.ndarray
    channels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_semantic_rate_bps",
                           np.asarray(self.min_semantic_rate_bps, dtype=float))
        object.__setattr__(self, "min_ratio", np.asarray(self.min_ratio, dtype=float))
        object.__setattr__(self, "channels", np.asarray(self.channels, dtype=complex))

    def with_(self, **kwargs) -> "Scenario":
        """Return a copy with the given fields replaced."""
        return replace(self, **kwargs)


def generate_channels(k: int, m: int, seed: int) -> np.ndarray:
    """Draw a k-by-m i.i.d. unit-variance complex Gaussian channel matrix.

    Deterministic: the same (k, m, seed) triple always yields the same
    matrix bit for bit.
    """
    if k < 1 or m < 1:
        raise ValueError("k and m must be positive")
    rng = np.random.default_rng(seed)
    re = rng.standard_normal((k, m))
    im = rng.standard_normal((k, m))
    return (re + 1j * im) / np.sqrt(2.0)


def validate_scenario(s: Scenario) -> Scenario:
    """Check every structural invariant; raise with the full violation list."""
    bad = []
    if not (isinstance(s.num_users, (int, np.integer)) and s.num_users >= 1):
        bad.append("num_users: must be an integer >= 1")
    if not (isinstance(s.num_antennas, (int, np.integer)) and s.num_antennas >= 1):
        bad.append("num_antennas: must be an integer >= 1")
    for name in ("bandwidth_hz", "noise_power_w", "max_power_w"):
        v = getattr(s, name)
        if not (np.isfinite(v) and v > 0):
            bad.append(f"{name}: must be strictly positive")
    if not (np.isfinite(s.comp_power_coeff) and s.comp_power_coeff >= 0):
        bad.append("comp_power_coeff: must be nonnegative")

    k = s.num_users
    if s.min_semantic_rate_bps.shape != (k,):
        bad.append(f"min_semantic_rate_bps: expected length {k}")
    elif np.any(s.min_semantic_rate_bps < 0) or not np.all(np.isfinite(s.min_semantic_rate_bps)):
        bad.append("min_semantic_rate_bps: entries must be finite and nonnegative")
    if s.min_ratio.shape != (k,):
        bad.append(f"min_ratio: expected length {k}")
    elif np.any(s.min_ratio <= 0) or np.any(s.min_ratio > 1):
        bad.append("min_ratio: entries must lie in (0, 1]")

    if s.channels.shape != (k, s.num_antennas):
        bad.append(f"channels: expected shape ({k}, {s.num_antennas})")
    elif not np.all(np.isfinite(s.channels.view(float))):
        bad.append("channels: entries must be finite")
    elif np.any(np.linalg.norm(s.channels, axis=1) <= 0):
        bad.append("channels: every row must have strictly positive norm")

    if bad:
        raise ValidationError(bad)
    s.min_semantic_rate_bps.setflags(write=False)
    s.min_ratio.setflags(write=False)
    s.channels.setflags(write=False)
    return s


@dataclass(frozen=True)
class ExperimentSpec:
    """One parameter sweep: which schemes to run, what to sweep, over which seeds."""

    schemes: tuple
    sweep_parameter: str
    sweep_values: tuple
    seeds: tuple
    scenario: Scenario = None
    comp_load: CompLoadSpec = None

    def validated(self) -> "ExperimentSpec":
        bad = []
        if not self.schemes:
            bad.append("experiment.schemes: must be nonempty")
        for sch in self.schemes:
            if sch not in SCHEMES:
                bad.append(f"experiment.schemes: unknown scheme '{sch}'")
        if self.sweep_parameter not in SWEEP_PARAMETERS:
            bad.append(f"experiment.sweep_parameter: must be one of {SWEEP_PARAMETERS}")
        vals = list(self.sweep_values)
        if not vals:
            bad.append("experiment.sweep_values: must be nonempty")
        elif any(b <= a for a, b in zip(vals, vals[1:])):
            bad.append("experiment.sweep_values: must be strictly increasing")
        if not self.seeds:
            bad.append("experiment.seeds: must be nonempty")
        if bad:
            raise ValidationError(bad)
        return self


_SCENARIO_KEYS = {
    "num_users", "num_antennas", "bandwidth_hz", "noise_power_dbm", "max_power_dbm",
    "comp_power_coeff", "min_semantic_rate_bps", "min_ratio", "channel_seed",
}
_COMP_KEYS = {"slopes", "intercepts", "boundaries"}
_EXPERIMENT_KEYS = {"schemes", "sweep_parameter", "sweep_values", "seeds"}
_TOP_KEYS = {"scenario", "comp_load", "experiment"}


def _reject_unknown(section: dict, allowed: set, where: str):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return section[key]


def load_config(path) -> tuple[Scenario, CompLoadSpec, ExperimentSpec | None]:
    """Parse and validate a JSON config; unknown keys are rejected.

    All powers in the file are given in dBm (keys carry a ``_dbm`` suffix)
    and are converted to Watts here. Channels are generated from the
    scenario's ``channel_seed`` (default 0); sweep runners re-seed per run.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw, where=str(path))


def parse_config(raw: dict, where: str = "config") -> tuple[Scenario, CompLoadSpec, ExperimentSpec | None]:
    """Same as :func:`load_config` but from an already-parsed dict."""
    _reject_unknown(raw, _TOP_KEYS, where)
    sc = raw.get("scenario")
    if not isinstance(sc, dict):
        raise ConfigError(f"{where}: missing or invalid 'scenario' section")
    cl = raw.get("comp_load")
    if not isinstance(cl, dict):
        raise ConfigError(f"{where}: missing or invalid 'comp_load' section")
    _reject_unknown(sc, _SCENARIO_KEYS, f"{where}: scenario")
    _reject_unknown(cl, _COMP_KEYS, f"{where}: comp_load")

    spec = CompLoadSpec(
        slopes=np.asarray(_require(cl, "slopes", "comp_load"), dtype=float),
        intercepts=np.asarray(_require(cl, "intercepts", "comp_load"), dtype=float),
        boundaries=np.asarray(_require(cl, "boundaries", "comp_load"), dtype=float),
    )
    validate_spec(spec)

    k = _require(sc, "num_users", "scenario")
    m = _require(sc, "num_antennas", "scenario")
    if not isinstance(k, int) or not isinstance(m, int):
        raise ConfigError("scenario: num_users and num_antennas must be integers")
    seed = sc.get("channel_seed", 0)
    cmin = sc.get("min_semantic_rate_bps")
    if cmin is None:
        cmin = np.zeros(k)
    rho_min = sc.get("min_ratio")
    if rho_min is None:
        rho_min = np.full(k, spec.boundaries[-1])

    scenario = Scenario(
        num_users=k,
        num_antennas=m,
        bandwidth_hz=float(_require(sc, "bandwidth_hz", "scenario")),
        noise_power_w=dbm_to_watts(float(_require(sc, "noise_power_dbm", "scenario"))),
        max_power_w=dbm_to_watts(float(_require(sc, "max_power_dbm", "scenario"))),
        comp_power_coeff=float(sc.get("comp_power_coeff", 1.0)),
        min_semantic_rate_bps=np.asarray(cmin, dtype=float),
        min_ratio=np.asarray(rho_min, dtype=float),
        channels=generate_channels(k, m, int(seed)),
    )
    validate_scenario(scenario)

    experiment = None
    ex = raw.get("experiment")
    if ex is not None:
        if not isinstance(ex, dict):
            raise ConfigError(f"{where}: 'experiment' must be an object")
        _reject_unknown(ex, _EXPERIMENT_KEYS, f"{where}: experiment")
        experiment = ExperimentSpec(
            schemes=tuple(_require(ex, "schemes", "experiment")),
            sweep_parameter=str(_require(ex, "sweep_parameter", "experiment")),
            sweep_values=tuple(float(v) for v in _require(ex, "sweep_values", "experiment")),
            seeds=tuple(int(s) for s in _require(ex, "seeds", "experiment")),
            scenario=scenario,
            comp_load=spec,
        ).validated()
    return scenario, spec, experiment


def apply_sweep_value(s: Scenario, parameter: str, value: float) -> Scenario:
    """Return a scenario with one swept parameter substituted."""
    if parameter == "comp_power_coeff":
        return s.with_(comp_power_coeff=float(value))
    if parameter == "max_power_dbm":
        return s.with_(max_power_w=dbm_to_watts(float(value)))
    if parameter == "bandwidth_hz":
        return s.with_(bandwidth_hz=float(value))
    if parameter == "noise_power_dbm":
        return s.with_(noise_power_w=dbm_to_watts(float(value)))
    raise ValueError(f"unknown sweep parameter '{parameter}'")
