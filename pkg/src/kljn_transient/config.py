"""Run configuration: a flat ``key = value`` text file with command-line overrides.

Schema (defaults are the reference experiment)::

    r_ha, r_la, r_hb, r_lb   resistors, ohm
    u_la                     reference generator RMS, V
    bandwidth                noise bandwidth, Hz
    z0                       cable characteristic impedance, ohm
    fly_time                 one-way cable delay, s
    cable_length, velocity   alternative to fly_time (m, m/s); give both or neither
    samples_per_fly          simulation steps per fly time
    runs, repeats            Monte Carlo runs per repeat, number of repeats
    master_seed              seed of all per-run random streams
    noise_seed               seed of the noise database
    tau_multiples            observation windows in fly times, comma separated
    state, defense           loop state and defense flag for the `run` command
    slope_tolerance          relative slope-ratio tolerance of the defense
    start_threshold          zero-start amplitude limit, fraction of RMS
    fit_window               slope fit length in samples (0 = curvature-limited)
    attempt_budget           pairing attempts before giving up
    record_length            samples per stored noise record (power of two)
    records_per_role         stored records per generator
    database_dir, output_dir paths
    ss_duration              steady-state check: total simulated signal, s
    ss_z0, ss_fly_time       steady-state check: short-line parameters
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidParameterError
from .noise import NoiseSpec, curvature_limited_fit_window
from .vmg import LoopState, ResistorQuad
from .wireline import CableParams


@dataclass(frozen=True)
class RunConfig:
    r_ha: float = 11e3
    r_la: float = 3e3
    r_hb: float = 9e3
    r_lb: float = 2e3
    u_la: float = 1.0
    bandwidth: float = 5e3
    z0: float = 50.0
    fly_time: float | None = 1e-5
    cable_length: float | None = None
    velocity: float | None = None
    samples_per_fly: int = 100
    runs: int = 1000
    repeats: int = 10
    master_seed: int = 20231
    noise_seed: int = 143503
    tau_multiples: tuple[float, ...] = (1.0, 4.0)
    state: str = "HL"
    defense: bool = False
    slope_tolerance: float = 0.01
    start_threshold: float = 1e-3
    fit_window: int = 0
    attempt_budget: int = 1000
    record_length: int = 2**23
    records_per_role: int = 1
    database_dir: str = "noise_db"
    output_dir: str = "results"
    ss_duration: float = 40.0
    ss_z0: float = 5000.0
    ss_fly_time: float = 1e-6

    def __post_init__(self):
        length_given = self.cable_length is not None or self.velocity is not None
        if (self.fly_time is None) == (not length_given):
            raise InvalidParameterError("give exactly one of fly_time or (cable_length, velocity)")
        if length_given and (self.cable_length is None or self.velocity is None):
            raise InvalidParameterError("cable_length and velocity must be given together")
        positive = [
            "r_ha", "r_la", "r_hb", "r_lb", "u_la", "bandwidth", "z0", "slope_tolerance",
            "start_threshold", "ss_duration", "ss_z0", "ss_fly_time",
        ]
        positive += [n for n in ("fly_time", "cable_length", "velocity") if getattr(self, n) is not None]
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be a positive number, got {value!r}")
        for name in ("samples_per_fly", "runs", "repeats", "attempt_budget", "records_per_role", "record_length"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be at least 1")
        if self.fit_window < 0 or self.fit_window == 1:
            raise InvalidParameterError("fit_window must be 0 (automatic) or at least 2")
        if not self.tau_multiples or any(not t > 0 for t in self.tau_multiples):
            raise InvalidParameterError("tau_multiples must be positive")
        if self.state not in ("HL", "LH"):
            raise InvalidParameterError(f"state must be HL or LH, got {self.state!r}")
        if not self.slope_tolerance < 1:
            raise InvalidParameterError("slope_tolerance must be below 1")

    # -- derived objects ---------------------------------------------------

    def quad(self) -> ResistorQuad:
        return ResistorQuad(self.r_ha, self.r_la, self.r_hb, self.r_lb)

    def effective_fly_time(self) -> float:
        if self.fly_time is not None:
            return self.fly_time
        return self.cable_length / self.velocity

    def cable(self) -> CableParams:
        return CableParams.from_fly_time(self.z0, self.effective_fly_time(), self.samples_per_fly)

    def steady_state_cable(self) -> CableParams:
        return CableParams.from_fly_time(self.ss_z0, self.ss_fly_time, 1)

    def loop_state(self) -> LoopState:
        return LoopState(self.state)

    def effective_fit_window(self) -> int:
        if self.fit_window:
            return self.fit_window
        return curvature_limited_fit_window(self.bandwidth, self.cable().dt, self.slope_tolerance)

    def noise_spec(self, target_rms: float) -> NoiseSpec:
        return NoiseSpec(self.cable().sample_rate, self.bandwidth, target_rms, self.record_length)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {_format(value)}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}
_INT_FIELDS = {
    "samples_per_fly", "runs", "repeats", "master_seed", "noise_seed", "fit_window",
    "attempt_budget", "record_length", "records_per_role",
}
_STR_FIELDS = {"state", "database_dir", "output_dir"}
_BOOL_FIELDS = {"defense"}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _convert(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _BOOL_FIELDS:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if key in _INT_FIELDS:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if key in _STR_FIELDS:
            return raw
        if key == "tau_multiples":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return float(raw)
    except ValueError as exc:
        raise InvalidParameterError(f"bad value for {key}: {raw!r}") from exc


def parse_text(text: str) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise InvalidParameterError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def build_config(values: dict) -> RunConfig:
    """Apply user values over the defaults.

    Giving cable_length/velocity without fly_time drops the default fly_time.
    """
    values = dict(values)
    if ("cable_length" in values or "velocity" in values) and "fly_time" not in values:
        values["fly_time"] = None
    return RunConfig(**values)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_text(text))
    if overrides:
        values.update(overrides)
    return build_config(values)


def parse_overrides(items: list[str]) -> dict:
    return parse_text("\n".join(items)) if items else {}
