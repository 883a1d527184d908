"""Scenario configuration: dataclass, presets and the key/value file format.

Config files are INI-style with a single ``[scenario]`` section::

    [scenario]
    scenario = Intersection
    arrival_rate = 0.05
    t_lat = 22000
    seed = 42

Durations and timestamps are integer milliseconds of simulation time.
"""
from __future__ import annotations

import configparser
import enum
import re
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional


class Scenario(str, enum.Enum):
    HighwayMerge = "HighwayMerge"
    Intersection = "Intersection"
    RouteChoice = "RouteChoice"


class Mode(str, enum.Enum):
    NoAttack = "no_attack"
    Undefended = "undefended"
    Defended = "defended"


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = Scenario.HighwayMerge
    arrival_rate: float = 0.2          # vehicles / s (per entry point)
    t_lat: int = 22_000
    tb_s: int = 1_000
    attack_start: int = 60_000
    attacker_count: int = 1
    sybil_count: int = 2
    reroute_probability: float = 0.9
    seed: int = 0
    duration: int = 600_000
    mode: Mode = Mode.Defended
    epsilon: float = 0.01
    comm_range: float = 300.0
    exam_range: float = 60.0
    n_th: float = 5.0
    attacker_credit_multiple: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "mode", Mode(self.mode))
        problems = self.problems()
        if problems:
            raise ConfigError(problems[0][1], key=problems[0][0])

    def problems(self) -> list:
        out = []
        for name in ("arrival_rate", "t_lat", "tb_s", "duration", "comm_range", "exam_range", "n_th"):
            if not getattr(self, name) > 0:
                out.append((name, f"{name} must be positive"))
        for name in ("attack_start", "attacker_count", "sybil_count"):
            if getattr(self, name) < 0:
                out.append((name, f"{name} must be non-negative"))
        if not 0 <= self.reroute_probability <= 1:
            out.append(("reroute_probability", "reroute_probability must lie in [0, 1]"))
        if not 0 <= self.epsilon <= 1:
            out.append(("epsilon", "epsilon must lie in [0, 1]"))
        if self.exam_range > self.comm_range:
            out.append(("exam_range", "exam_range cannot exceed comm_range"))
        if not 0 <= self.seed < 2 ** 64:
            out.append(("seed", "seed must be an unsigned 64-bit integer"))
        if self.scenario is Scenario.RouteChoice and self.sybil_count < 2:
            out.append(("sybil_count", "route choice needs at least two Sybil identities"))
        return out

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_ini(self) -> str:
        lines = ["[scenario]"]
        for k, v in asdict(self).items():
            lines.append(f"{k} = {v.value if isinstance(v, enum.Enum) else v}")
        return "\n".join(lines) + "\n"


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key, self.line = key, line
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    if kind in ("int",):
        return int(float(raw)) if re.fullmatch(r"[-+]?\d+(\.0*)?(e\d+)?", raw) else int(raw)
    if kind in ("float",):
        return float(raw)
    return raw


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate; errors carry the offending line number."""
    line_of = {}
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_]+)\s*[=:]", line)
        if m:
            line_of.setdefault(m.group(1).lower(), i)
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from exc
    if "scenario" not in parser:
        raise ConfigError("missing [scenario] section", line=1)
    values = {}
    for key, raw in parser["scenario"].items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", key=key, line=line_of.get(key))
        try:
            values[key] = _convert(key, raw.strip())
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r}", key=key, line=line_of.get(key)) from exc
    try:
        return ScenarioConfig(**values)
    except ConfigError as exc:
        raise ConfigError(str(exc), key=exc.key, line=line_of.get(exc.key)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc), line=None) from exc


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


# six compromised identities spoof in turn, 90 s each; sensors confirm objects within 30 m
_MERGE = ScenarioConfig(Scenario.HighwayMerge, arrival_rate=0.2, attacker_count=6, exam_range=30.0)
# arrivals per approach; vehicles at the box can examine one another across it
_CROSSING = ScenarioConfig(Scenario.Intersection, arrival_rate=0.05, exam_range=100.0,
                           duration=300_000)

PRESETS = {
    "merge-no-attack": _MERGE.with_(mode=Mode.NoAttack),
    "merge-undefended": _MERGE.with_(mode=Mode.Undefended),
    "merge-defended": _MERGE.with_(mode=Mode.Defended),
    "intersection-22": _CROSSING.with_(t_lat=22_000),
    "intersection-60": _CROSSING.with_(t_lat=60_000),
    "routes-0.2": ScenarioConfig(Scenario.RouteChoice, arrival_rate=0.2, duration=2_400_000),
    "routes-0.33": ScenarioConfig(Scenario.RouteChoice, arrival_rate=0.33, duration=2_400_000),
}
