"""Scenario data model and the ``.scn.json`` text format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError, VersionMismatch
from .geometry import dedupe_points

SCHEMA_VERSION = 1
DEFAULT_HORIZON = 80
MAX_AGENTS = 128
AGENT_KINDS = ("vehicle", "pedestrian", "cyclist")


def canonical(x):
    """Round to the 9 significant digits used on disk."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return float(format(float(arr), ".9g"))
    flat = [float(format(v, ".9g")) for v in arr.ravel().tolist()]
    return np.array(flat, dtype=float).reshape(arr.shape)


@dataclass
class AgentLog:
    width: float
    length: float
    states: np.ndarray
    kind: str = "vehicle"

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)

    def __eq__(self, other):
        return (isinstance(other, AgentLog) and self.width == other.width
                and self.length == other.length and self.kind == other.kind
                and np.array_equal(self.states, other.states))


@dataclass
class Scenario:
    id: str
    map_polylines: list
    routing: np.ndarray
    agents: list
    ego_index: int = 0
    horizon_steps: int = DEFAULT_HORIZON
    frequency_hz: float = 10.0
    polyline_kinds: list = field(default=None)

    def __post_init__(self):
        self.map_polylines = [np.asarray(p, dtype=float) for p in self.map_polylines]
        self.routing = np.asarray(self.routing, dtype=float)
        if self.polyline_kinds is None:
            self.polyline_kinds = ["road_edge"] * len(self.map_polylines)

    @property
    def ego(self) -> AgentLog:
        return self.agents[self.ego_index]

    @property
    def family(self) -> str:
        return self.id.split("-", 1)[0]

    def road_segments(self):
        """All road-edge segments as ``(starts, ends)`` arrays."""
        starts, ends = [], []
        for p, kind in zip(self.map_polylines, self.polyline_kinds):
            if kind == "road_edge":
                starts.append(p[:-1])
                ends.append(p[1:])
        if not starts:
            return np.zeros((0, 2)), np.zeros((0, 2))
        return np.concatenate(starts), np.concatenate(ends)

    def validate(self) -> "Scenario":
        if self.horizon_steps <= 0:
            raise ValidationError("horizon_steps must be positive")
        if self.frequency_hz <= 0:
            raise ValidationError("frequency_hz must be positive")
        if not 1 <= len(self.agents) <= MAX_AGENTS:
            raise ValidationError(f"agent count {len(self.agents)} outside [1, {MAX_AGENTS}]")
        if not 0 <= self.ego_index < len(self.agents):
            raise ValidationError("ego_index out of range")
        for i, a in enumerate(self.agents):
            if not (a.width > 0 and a.length > 0):
                raise ValidationError(f"agent {i} has non-positive extent")
            if a.kind not in AGENT_KINDS:
                raise ValidationError(f"agent {i} has unknown kind {a.kind!r}")
            if a.states.shape != (self.horizon_steps, 5):
                raise ValidationError(
                    f"agent {i} has states of shape {a.states.shape}, expected ({self.horizon_steps}, 5)")
        if self.routing.ndim != 2 or self.routing.shape[1] != 2 or len(self.routing) < 2:
            raise ValidationError("routing must have >= 2 points")
        for p in self.map_polylines:
            if p.ndim != 2 or p.shape[1] != 2 or len(p) < 2:
                raise ValidationError("map polylines must have >= 2 points")
        return self

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.id == other.id and self.ego_index == other.ego_index
                and self.horizon_steps == other.horizon_steps
                and self.frequency_hz == other.frequency_hz
                and self.polyline_kinds == other.polyline_kinds
                and len(self.map_polylines) == len(other.map_polylines)
                and all(np.array_equal(a, b) for a, b in zip(self.map_polylines, other.map_polylines))
                and np.array_equal(self.routing, other.routing)
                and self.agents == other.agents)


def routing_from_log(states) -> np.ndarray:
    """The ego route: its logged (x, y) sequence with repeated points removed."""
    return dedupe_points(np.asarray(states)[:, :2])


# -- text format ---------------------------------------------------------

def _num(x) -> str:
    s = format(float(x), ".9g")
    if s in ("nan", "inf", "-inf"):
        raise ValidationError("non-finite number in scenario")
    return s


def _row(values) -> str:
    return "[" + ",".join(_num(v) for v in values) + "]"


def dumps_scenario(s: Scenario) -> str:
    lines = ["{"]
    agents = []
    for a in s.agents:
        states = ",\n      ".join(_row(r) for r in a.states)
        agents.append(
            "    {\"kind\":" + json.dumps(a.kind) + ",\"length\":" + _num(a.length)
            + ",\"states\":[\n      " + states + "],\"width\":" + _num(a.width) + "}")
    polys = []
    for p, kind in zip(s.map_polylines, s.polyline_kinds):
        polys.append("    {\"kind\":" + json.dumps(kind) + ",\"points\":["
                     + ",".join(_row(r) for r in p) + "]}")
    body = [
        "\"agents\":[\n" + ",\n".join(agents) + "]",
        "\"ego_index\":" + str(int(s.ego_index)),
        "\"frequency_hz\":" + _num(s.frequency_hz),
        "\"horizon_steps\":" + str(int(s.horizon_steps)),
        "\"id\":" + json.dumps(s.id),
        "\"map_polylines\":[\n" + ",\n".join(polys) + "]",
        "\"routing\":[" + ",".join(_row(r) for r in s.routing) + "]",
        "\"version\":" + str(SCHEMA_VERSION),
    ]
    lines.append("  " + ",\n  ".join(body))
    lines.append("}")
    return "\n".join(lines) + "\n"


def save_scenario(s: Scenario, path) -> None:
    s.validate()
    Path(path).write_text(dumps_scenario(s), encoding="utf-8")


def _require(obj, key, where="scenario"):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing key in {where}", field=key)
    return obj[key]


def _array(value, key, cols):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric data: {exc}", field=key) from None
    if arr.ndim != 2 or arr.shape[1] != cols:
        raise ParseError(f"expected rows of {cols} numbers", field=key)
    return arr


def loads_scenario(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    version = _require(raw, "version")
    if version != SCHEMA_VERSION:
        raise VersionMismatch(f"unsupported scenario schema version {version!r}")
    agents = []
    for i, a in enumerate(_require(raw, "agents")):
        where = f"agents[{i}]"
        agents.append(AgentLog(
            width=float(_require(a, "width", where)),
            length=float(_require(a, "length", where)),
            states=_array(_require(a, "states", where), f"{where}.states", 5),
            kind=str(_require(a, "kind", where)),
        ))
    polys, kinds = [], []
    for i, p in enumerate(_require(raw, "map_polylines")):
        where = f"map_polylines[{i}]"
        kinds.append(str(_require(p, "kind", where)))
        polys.append(_array(_require(p, "points", where), f"{where}.points", 2))
    s = Scenario(
        id=str(_require(raw, "id")),
        map_polylines=polys,
        routing=_array(_require(raw, "routing"), "routing", 2),
        agents=agents,
        ego_index=int(_require(raw, "ego_index")),
        horizon_steps=int(_require(raw, "horizon_steps")),
        frequency_hz=float(_require(raw, "frequency_hz")),
        polyline_kinds=kinds,
    )
    return s.validate()


def load_scenario(path) -> Scenario:
    return loads_scenario(Path(path).read_text(encoding="utf-8"))


def load_scenario_dir(path) -> list:
    """Every ``*.scn.json`` under ``path`` in sorted filename order."""
    files = sorted(Path(path).glob("*.scn.json"))
    return [load_scenario(f) for f in files]
