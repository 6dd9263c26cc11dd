"""Rectangle-token observations in the ego frame, plus the IL dump format."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import polyline_to_rects, rdp_simplify, world_to_ego, wrap_angle

ROUTING, ROAD_EDGE, NON_EGO, EGO = 0, 1, 2, 3
TOKEN_DIM = 7


@dataclass(frozen=True)
class TokenizerConfig:
    n_rt: int = 32
    n_rd: int = 64
    n_nego: int = 32
    fov_w: float = 80.0
    fov_h: float = 20.0
    road_edge_width: float = 0.5
    include_ego_token: bool = True
    rdp_road: float = 0.5
    rdp_routing: float = 0.1

    def __post_init__(self):
        if min(self.n_rt, self.n_rd, self.n_nego) < 1:
            raise ValidationError("token capacities must be >= 1")
        if not (self.fov_w > 0 and self.fov_h > 0):
            raise ValidationError("FOV dimensions must be positive")

    @property
    def rows(self) -> int:
        return self.n_rt + self.n_rd + self.n_nego + 1


@dataclass
class Observation:
    tokens: np.ndarray  # (rows, 7)
    mask: np.ndarray  # (rows,) bool

    def __eq__(self, other):
        return (isinstance(other, Observation) and np.array_equal(self.tokens, other.tokens)
                and np.array_equal(self.mask, other.mask))


@dataclass
class StaticCache:
    routing_rects: np.ndarray  # (n, 6) world frame [cx, cy, w, h, yaw, id]
    road_rects: np.ndarray
    ego_length: float
    ego_width: float


@dataclass
class TokenStats:
    truncated: int = 0


STATS = TokenStats()


def preprocess_static(scenario, cfg: TokenizerConfig = TokenizerConfig()) -> StaticCache:
    """Simplify routing and road edges and extend them into rectangles.

    Routing rectangles take the ego's width; road edges ``road_edge_width``.
    Ids run sequentially within each class.
    """
    ego = scenario.ego
    route = rdp_simplify(scenario.routing, cfg.rdp_routing)
    routing_rects = polyline_to_rects(route, ego.width, 0)
    road = []
    next_id = 0
    for poly, kind in zip(scenario.map_polylines, scenario.polyline_kinds):
        if kind != "road_edge":
            continue
        pts = rdp_simplify(poly, cfg.rdp_road)
        rects = polyline_to_rects(pts, cfg.road_edge_width, next_id)
        next_id += len(rects)
        road.append(rects)
    road_rects = np.concatenate(road) if road else np.zeros((0, 6))
    return StaticCache(routing_rects, road_rects, float(ego.length), float(ego.width))


def _to_ego(rects, ego_pose):
    out = rects.copy()
    out[:, 0:2] = world_to_ego(rects[:, 0:2], ego_pose)
    out[:, 4] = wrap_angle(rects[:, 4] - ego_pose[2])
    return out


def _select(rows, capacity, fov=None):
    """FOV filter (centre test) then keep the ``capacity`` nearest, ties by id."""
    if fov is not None and len(rows):
        inside = (np.abs(rows[:, 0]) <= fov[0] / 2) & (np.abs(rows[:, 1]) <= fov[1] / 2)
        rows = rows[inside]
    if len(rows) > capacity:
        STATS.truncated += len(rows) - capacity
        dist = np.hypot(rows[:, 0], rows[:, 1])
        order = np.lexsort((np.arange(len(rows)), dist))[:capacity]
        rows = rows[np.sort(order)]
    return rows


def tokenize(sim_state, static_cache: StaticCache, cfg: TokenizerConfig = TokenizerConfig()) -> Observation:
    """Token matrix ``[routing | road edges | non-ego | ego]`` in the ego frame.

    ``sim_state`` is a :class:`~chauffeur.simulator.SimState` or a tuple
    ``(agent_states, dims, ego_index)`` with dims rows ``(length, width)``.
    """
    if hasattr(sim_state, "agent_states"):
        states = sim_state.agent_states
        dims = sim_state.context.dims
        e = sim_state.context.ego_index
    else:
        states, dims, e = sim_state
        states = np.asarray(states, dtype=float)
        dims = np.asarray(dims, dtype=float)
    ego = states[e]
    pose = (float(ego[0]), float(ego[1]), float(ego[2]))
    tokens = np.zeros((cfg.rows, TOKEN_DIM))
    mask = np.zeros(cfg.rows, dtype=bool)

    rt = _select(_to_ego(static_cache.routing_rects, pose), cfg.n_rt)
    rd = _select(_to_ego(static_cache.road_rects, pose), cfg.n_rd, (cfg.fov_w, cfg.fov_h))

    others = [i for i in range(len(states)) if i != e]
    if others:
        st = states[others]
        # agent rows: [x, y, width, length, yaw, speed]
        ag = np.empty((len(others), 6))
        ag[:, 0:2] = st[:, 0:2]
        ag[:, 2] = dims[others, 1]
        ag[:, 3] = dims[others, 0]
        ag[:, 4] = st[:, 2]
        ag[:, 5] = np.hypot(st[:, 3], st[:, 4])
        ag = _select(_to_ego(ag, pose), cfg.n_nego, (cfg.fov_w, cfg.fov_h))
    else:
        ag = np.zeros((0, 6))

    offsets = (0, cfg.n_rt, cfg.n_rt + cfg.n_rd)
    for block, start, seg in ((rt, offsets[0], ROUTING), (rd, offsets[1], ROAD_EDGE), (ag, offsets[2], NON_EGO)):
        n = len(block)
        tokens[start:start + n, :6] = block
        tokens[start:start + n, 6] = seg
        mask[start:start + n] = True
    if cfg.include_ego_token:
        tokens[-1] = [0.0, 0.0, dims[e, 1], dims[e, 0], 0.0, np.hypot(ego[3], ego[4]), EGO]
        mask[-1] = True
    return Observation(tokens, mask)


def stack(observations):
    """Batch observations into ``(tokens (B, R, 7), mask (B, R))``."""
    obs = list(observations)
    return np.stack([o.tokens for o in obs]), np.stack([o.mask for o in obs])


# -- observation dump (IL pretraining data) ------------------------------

DUMP_MAGIC = "CHAUFFEUR-OBS"
DUMP_VERSION = 1


def _record_dtype(rows, action_dim):
    return np.dtype([
        ("scenario", "<i4"),
        ("step", "<i4"),
        ("tokens", "<f8", (rows, TOKEN_DIM)),
        ("mask", "u1", (rows,)),
        ("action", "<f8", (action_dim,)),
    ])


class ObservationDump:
    """Appendable binary stream of (tokens, mask, GT action) records.

    The file starts with one JSON header line; records follow as packed
    little-endian structs.
    """

    def __init__(self, path, rows: int, action_dim: int, mode: str, tokenizer: TokenizerConfig = None):
        self.path = Path(path)
        self.rows, self.action_dim, self.mode = rows, action_dim, mode
        self.dtype = _record_dtype(rows, action_dim)
        if not self.path.exists() or self.path.stat().st_size == 0:
            header = {"format": DUMP_MAGIC, "version": DUMP_VERSION, "rows": rows, "cols": TOKEN_DIM,
                      "action_dim": action_dim, "mode": mode,
                      "tokenizer": asdict(tokenizer) if tokenizer else None}
            with open(self.path, "wb") as fh:
                fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        else:
            head = read_dump_header(self.path)
            if (head["rows"], head["action_dim"]) != (rows, action_dim):
                raise ValidationError("dump file shape does not match")

    def append(self, scenario_index: int, step: int, obs: Observation, action) -> None:
        rec = np.zeros(1, dtype=self.dtype)
        rec["scenario"] = scenario_index
        rec["step"] = step
        rec["tokens"] = obs.tokens
        rec["mask"] = obs.mask
        rec["action"] = action
        with open(self.path, "ab") as fh:
            fh.write(rec.tobytes())

    def extend(self, records) -> None:
        recs = list(records)
        arr = np.zeros(len(recs), dtype=self.dtype)
        for k, (si, t, obs, act) in enumerate(recs):
            arr[k] = (si, t, obs.tokens, obs.mask, act)
        with open(self.path, "ab") as fh:
            fh.write(arr.tobytes())


def read_dump_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        head = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError("bad observation dump header", line=1) from None
    if head.get("format") != DUMP_MAGIC:
        raise ParseError("not an observation dump", field="format", line=1)
    return head


def read_dump(path):
    """Load a dump as a structured array (fields scenario, step, tokens, mask, action)."""
    head = read_dump_header(path)
    dtype = _record_dtype(head["rows"], head["action_dim"])
    with open(path, "rb") as fh:
        fh.readline()
        payload = fh.read()
    if len(payload) % dtype.itemsize:
        raise ParseError("truncated observation dump record")
    return head, np.frombuffer(payload, dtype=dtype)
