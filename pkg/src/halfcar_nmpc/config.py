"""Run configuration: INI schema, validation and object construction.

Every key is optional except where noted; unknown sections and keys are
rejected.  Errors carry the file line of the offending entry.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import HalfCarError
from .mpc import STRUCTURE_POLICIES, ControllerMode, DisturbanceConfig, MpcConfig, Scenario
from .nlp_solver import SolverConfig
from .ocp import OcpConfig
from .road_profile import AxleDelay, RoadMeasurement, SyntheticProfile, read_road_csv
from .vehicle_model import HalfCarParams


class ConfigError(HalfCarError):
    """A config problem; ``diagnostics`` lists every message found."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("\n".join(diagnostics))
        self.diagnostics = diagnostics


def _bumps(text: str) -> tuple:
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ValueError(f"bump {item!r} is not time:height:duration")
        out.append(tuple(float(v) for v in parts))
    return tuple(out)


def _modes(text: str) -> tuple:
    modes = tuple(ControllerMode(s.strip()) for s in text.split(",") if s.strip())
    if not modes:
        raise ValueError("at least one mode is required")
    if len(set(modes)) != len(modes):
        raise ValueError("duplicate modes")
    return modes


def _choice(*options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "vehicle": {f.name: float for f in fields(HalfCarParams)},
    "road": {
        "source": _choice("synthetic", "file"),
        "path": str,
        "duration": float,
        "sample_period": float,
        "start_time": float,
        "seed": int,
        "n_tones": int,
        "tone_amplitude": float,
        "min_hz": float,
        "max_hz": float,
        "bumps": _bumps,
        "cutoff_hz": float,
        "speed": float,
        "delay": float,
        "sim_start": float,
    },
    "ocp": {f.name: (int if f.name in ("horizon_N", "substeps") else float) for f in fields(OcpConfig)},
    "solver": {
        "kkt_tolerance": float,
        "max_iterations": int,
        "bfgs_reset_period": int,
        "polish": _bool,
        "stall_tolerance": float,
    },
    "mpc": {
        "prediction_lead": int,
        "plant_substep_factor": int,
        "seed": int,
        "run_length": int,
        "horizon_check_index": int,
        "trust_state_norm": float,
        "trust_road_norm": float,
        "structure_fallback": _choice(*STRUCTURE_POLICIES),
        "jerk_sample_period": float,
    },
    "disturbance": {
        "state_amplitude": float,
        "road_amplitude": float,
        "state_channel": _choice("measurement", "process"),
    },
    "output": {"directory": str, "modes": _modes},
}

_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_map(text: str) -> dict[tuple[str, Optional[str]], int]:
    lines: dict[tuple[str, Optional[str]], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        m = _KEY.match(line)
        if m and section is not None and not line[:1].isspace():
            lines.setdefault((section, m.group(1).strip()), no)
    return lines


@dataclass
class RunConfig:
    mpc: MpcConfig
    scenario: Scenario
    modes: tuple
    output_dir: Path
    source: Path = field(default=Path("."))


class _Reader:
    def __init__(self, path: Path, text: str):
        self.path = path
        self.lines = _line_map(text)
        self.diagnostics: list[str] = []
        self.values: dict[str, dict[str, Any]] = {}

    def where(self, section: str, key: Optional[str] = None) -> str:
        no = self.lines.get((section, key)) or self.lines.get((section, None))
        return f"{self.path}:{no}" if no else str(self.path)

    def error(self, section: str, key: Optional[str], msg: str) -> None:
        name = f"[{section}] {key}" if key else f"[{section}]"
        self.diagnostics.append(f"{self.where(section, key)}: {name}: {msg}")

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)


def _parse(path: Path) -> _Reader:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config: {exc.strerror or exc}"]) from exc
    reader = _Reader(path, text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (horizon_N, mu_R, ...)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        prefix = f"{path}:{line}" if line else str(path)
        raise ConfigError([f"{prefix}: {exc.message.splitlines()[0]}"]) from exc

    for section in cp.sections():
        if section not in SCHEMA:
            reader.error(section, None, f"unknown section (expected one of {', '.join(SCHEMA)})")
            continue
        values = reader.values.setdefault(section, {})
        for key, raw in cp.items(section):
            convert = SCHEMA[section].get(key)
            if convert is None:
                reader.error(section, key, "unknown key")
                continue
            try:
                values[key] = convert(raw.strip())
            except ValueError as exc:
                reader.error(section, key, f"invalid value {raw.strip()!r}: {exc}")
    return reader


def _build(section: str, reader: _Reader, build: Callable[[], Any]):
    try:
        return build()
    except (ValueError, TypeError, HalfCarError) as exc:
        reader.error(section, None, str(exc))
        return None


def _measurement(reader: _Reader) -> Optional[RoadMeasurement]:
    road = reader.values.get("road", {})
    source = road.get("source", "synthetic")
    synth_keys = {"duration", "start_time", "seed", "n_tones", "tone_amplitude",
                  "min_hz", "max_hz", "bumps", "sample_period"}
    if source == "file":
        if "path" not in road:
            reader.error("road", "path", "required when source = file")
            return None
        for key in sorted(synth_keys & road.keys()):
            reader.error("road", key, "only valid for source = synthetic")
        p = Path(road["path"])
        if not p.is_absolute():
            p = reader.path.parent / p
        try:
            return read_road_csv(p)
        except (OSError, ValueError, HalfCarError) as exc:
            reader.error("road", "path", str(exc))
            return None
    if "path" in road:
        reader.error("road", "path", "only valid for source = file")
    kwargs = {k: road[k] for k in synth_keys if k in road}
    if not kwargs.get("sample_period", 0.002) > 0:
        reader.error("road", "sample_period", "must be positive")
        return None
    if not kwargs.get("duration", 1.0) > 0:
        reader.error("road", "duration", "must be positive")
        return None
    return _build("road", reader, lambda: SyntheticProfile(**kwargs).measurement())


def load(path, seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    """Parse and cross-check a config file; raises ``ConfigError``."""
    path = Path(path)
    reader = _parse(path)
    v = reader.values

    vehicle = _build("vehicle", reader, lambda: HalfCarParams(**v.get("vehicle", {})))
    o = v.get("ocp", {})
    lo, hi = o.get("u_min", OcpConfig.u_min), o.get("u_max", OcpConfig.u_max)
    if not lo < hi:
        key = "u_min" if "u_min" in o else "u_max"
        reader.error("ocp", key, f"u_min = {lo:g} must be below u_max = {hi:g}")
        ocp = None
    else:
        ocp = _build("ocp", reader, lambda: OcpConfig(**o))
    solver = _build("solver", reader, lambda: SolverConfig(**v.get("solver", {})))
    dist = _build("disturbance", reader, lambda: DisturbanceConfig(**v.get("disturbance", {})))
    mpc_kw = dict(v.get("mpc", {}))
    if seed is not None:
        mpc_kw["seed"] = int(seed)
    mpc = None
    if None not in (ocp, solver, dist):
        mpc = _build("mpc", reader, lambda: MpcConfig(ocp=ocp, solver=solver, disturbance=dist, **mpc_kw))

    measurement = _measurement(reader)
    road = v.get("road", {})
    cutoff = road.get("cutoff_hz", 50.0)
    scenario = None
    if measurement is not None:
        nyquist = 0.5 / measurement.sample_period
        if not 0 < cutoff <= nyquist:
            reader.error(
                "road", "cutoff_hz",
                f"cutoff {cutoff:g} Hz exceeds the Nyquist frequency {nyquist:g} Hz "
                f"of {measurement.sample_period:g} s sampling" if cutoff > 0 else "must be positive",
            )
    if "speed" in road and "delay" in road:
        reader.error("road", "delay", "give either speed or delay, not both")
    delay = None
    if vehicle is not None:
        try:
            if "delay" in road:
                delay = AxleDelay(road["delay"])
            else:
                delay = AxleDelay.from_speed(vehicle.wheelbase, road.get("speed", 20.0))
        except (ValueError, HalfCarError) as exc:
            reader.error("road", "delay" if "delay" in road else "speed", str(exc))
    if measurement is not None and vehicle is not None and delay is not None and not reader.diagnostics:
        scenario = Scenario(vehicle, measurement, cutoff, delay, road.get("sim_start"))
        if mpc is not None:
            try:
                scenario.check_window(mpc)
            except HalfCarError as exc:
                reader.error("mpc", "run_length", str(exc))

    outputs = v.get("output", {})
    modes = outputs.get("modes", tuple(ControllerMode))
    out_dir = Path(out) if out is not None else Path(outputs.get("directory", "out"))
    if out is None and not out_dir.is_absolute():
        out_dir = path.parent / out_dir

    if reader.diagnostics:
        raise ConfigError(reader.diagnostics)
    return RunConfig(mpc, scenario, modes, out_dir, path)
