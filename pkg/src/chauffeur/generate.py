"""Procedural scenarios with scripted expert drivers.

Each family lays out lanes and road edges in a local frame (ego starts at the
origin heading +x), which is then placed in the world by a random rigid
transform.  The ego log comes from pure pursuit + IDM integrated with the
bicycle transition; other vehicles follow their lanes with IDM.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import STEER_RANGE, step_bicycle
from .errors import GenerationFailed, ValidationError
from .geometry import obb_hits_segments, obb_overlap_many, resample_polyline
from .scenario import AgentLog, Scenario, canonical, routing_from_log
from .simulator import IdmParams, _Path, idm_accel

FAMILIES = ("straight", "curve", "intersection", "parking")
LANE_W = 3.5
SHOULDER = 1.0
EDGE_PIECE = 15.0
LOOKAHEAD = 6.0
LAT_ACCEL = 2.5
MAX_ATTEMPTS = 100
CLEARANCE = 0.2


@dataclass(frozen=True)
class ScenarioFamilySpec:
    family: str
    traffic_density: int = 0
    curvature: float = 0.0
    seed: int = 0

    def validate(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.curvature < 0:
            raise ValidationError("curvature must be >= 0")
        if not 0 <= self.traffic_density <= 127:
            raise ValidationError("traffic_density must be in [0, 127]")
        return self


@dataclass
class _Layout:
    edges: list
    lanes: dict
    ego_lane: str
    ego_path: np.ndarray
    spawn: dict  # lane name -> (s_min, s_max) for moving traffic
    parked: list  # candidate parked poses (x, y, yaw)


# -- layouts -------------------------------------------------------------

def _line(p0, p1, spacing=1.0):
    return resample_polyline(np.array([p0, p1], dtype=float), spacing)


def _offset(path, d):
    """Offset a polyline laterally by ``d`` (left positive)."""
    t = np.gradient(path, axis=0)
    t /= np.hypot(t[:, 0], t[:, 1])[:, None]
    n = np.stack([-t[:, 1], t[:, 0]], axis=-1)
    return path + d * n


def _heading_path(segments, start=(0.0, 0.0), yaw0=0.0, spacing=0.5):
    """Integrate (length, curvature) pieces into a dense polyline."""
    pts = [np.array(start, dtype=float)]
    yaw = yaw0
    for length, kappa in segments:
        n = max(1, int(round(length / spacing)))
        ds = length / n
        for _ in range(n):
            if kappa == 0:
                step = ds * np.array([math.cos(yaw), math.sin(yaw)])
            else:
                new_yaw = yaw + kappa * ds
                step = np.array([math.sin(new_yaw) - math.sin(yaw), math.cos(yaw) - math.cos(new_yaw)]) / kappa
                yaw = new_yaw
            pts.append(pts[-1] + step)
    return np.array(pts)


def _chop(path, piece=EDGE_PIECE):
    """Split a dense edge into pieces so each keeps a local rectangle token."""
    out = []
    seg = np.hypot(*np.diff(path, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    start = 0
    for i in range(1, len(path)):
        if cum[i] - cum[start] >= piece or i == len(path) - 1:
            out.append(path[start:i + 1])
            start = i
    return [p for p in out if len(p) >= 2]


def _straight(rng, spec, parking=False):
    back, ahead = 60.0, 260.0
    ego_lane = _line((-back, 0.0), (ahead, 0.0), 0.5)
    opp = _line((ahead, LANE_W), (-back, LANE_W), 0.5)
    right = -(LANE_W / 2 + (2.5 if parking else 0.0) + SHOULDER)
    left = LANE_W * 1.5 + SHOULDER
    edges = _chop(_line((-back, right), (ahead, right))) + _chop(_line((-back, left), (ahead, left)))
    lanes = {"ego": ego_lane, "opp": opp}
    spawn = {"ego": (-50.0, 150.0), "opp": (0.0, 300.0)}
    parked = []
    ego_path = ego_lane[ego_lane[:, 0] >= 0.0]
    if parking:
        bay_y = -LANE_W / 2 - 1.25
        merge = 12.0
        xs = np.arange(0.0, merge + 1e-9, 0.5)
        u = xs / merge
        ys = bay_y * (1.0 - (3 * u ** 2 - 2 * u ** 3))
        ego_path = np.vstack([np.stack([xs, ys], -1), ego_lane[ego_lane[:, 0] > merge]])
        parked = [(x, bay_y, 0.0) for x in np.arange(-40.0, 160.0, 7.0) if not -9.0 < x < 18.0]
        spawn = {"ego": (25.0, 150.0), "opp": (0.0, 300.0)}
    return _Layout(edges, lanes, "ego", ego_path, spawn, parked)


def _curve(rng, spec):
    kappa = spec.curvature if spec.curvature > 0 else float(rng.uniform(0.01, 0.05))
    kappa = min(kappa, 0.12)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    angle = min(0.75 * math.pi, kappa * 150.0)
    lead_in = float(rng.uniform(5.0, 25.0))
    pieces = [(lead_in, 0.0), (angle / kappa, sign * kappa), (200.0, 0.0)]
    center = _heading_path(pieces)
    back = _line((-60.0, 0.0), (0.0, 0.0), 0.5)[:-1]
    ego_lane = np.vstack([back, center])
    opp = _offset(ego_lane, LANE_W)[::-1]
    right = _offset(ego_lane, -(LANE_W / 2 + SHOULDER))
    left = _offset(ego_lane, LANE_W * 1.5 + SHOULDER)
    edges = _chop(resample_polyline(right, 1.0)) + _chop(resample_polyline(left, 1.0))
    lanes = {"ego": ego_lane, "opp": opp}
    spawn = {"ego": (-50.0, 150.0), "opp": (0.0, 300.0)}
    return _Layout(edges, lanes, "ego", center, spawn, [])


def _corner(ax, ay, sx, sy, r=6.0, far=150.0):
    """Curb around one intersection corner; (sx, sy) point away from the box."""
    p_far_x = (ax + sx * far, ay)
    p_far_y = (ax, ay + sy * far)
    cx, cy = ax + sx * r, ay + sy * r
    th0 = math.atan2(ay - cy, 0.0)
    th1 = math.atan2(0.0, ax - cx)
    ths = np.linspace(th0, th1, 16) if abs(th1 - th0) <= math.pi else np.linspace(th0, th1 + 2 * math.pi * np.sign(th0 - th1), 16)
    arc = np.stack([cx + r * np.cos(ths), cy + r * np.sin(ths)], -1)
    leg_x = _line(p_far_x, tuple(arc[0]), 1.0)
    leg_y = _line(tuple(arc[-1]), p_far_y, 1.0)
    return np.vstack([leg_x[:-1], arc, leg_y[1:]])


def _intersection(rng, spec):
    xc = float(rng.uniform(25.0, 45.0))
    half = LANE_W + SHOULDER
    yc = LANE_W / 2
    edges = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            curb = _corner(xc + sx * half, yc + sy * half, sx, sy)
            edges += _chop(curb)
    east = _line((-60.0, 0.0), (xc + 200.0, 0.0), 0.5)
    west = _line((xc + 200.0, LANE_W), (-60.0, LANE_W), 0.5)
    north = _line((xc + LANE_W / 2, -150.0), (xc + LANE_W / 2, 150.0), 0.5)
    south = _line((xc - LANE_W / 2, 150.0), (xc - LANE_W / 2, -150.0), 0.5)
    turn = rng.choice(["left", "right"])
    if turn == "right":
        radius = (xc - LANE_W / 2) - (xc - half - 6.0)
        start = xc - LANE_W / 2 - radius
        pieces = [(start, 0.0), (radius * math.pi / 2, -1.0 / radius), (150.0, 0.0)]
    else:
        radius = (xc + LANE_W / 2) - (xc - half - 6.0)
        start = xc + LANE_W / 2 - radius
        pieces = [(start, 0.0), (radius * math.pi / 2, 1.0 / radius), (150.0, 0.0)]
    ego_path = _heading_path(pieces)
    lanes = {"ego": east, "opp": west, "north": north, "south": south}
    spawn = {"ego": (8.0, xc - 8.0), "opp": (0.0, 260.0), "north": (60.0, 300.0), "south": (60.0, 300.0)}
    return _Layout(edges, lanes, "ego", ego_path, spawn, [])


_LAYOUTS = {
    "straight": _straight,
    "curve": _curve,
    "intersection": _intersection,
    "parking": lambda rng, spec: _straight(rng, spec, parking=True),
}


# -- placement and simulation ------------------------------------------

def _transform(rng):
    theta = float(rng.uniform(-math.pi, math.pi))
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    # ego start placed so that its ~80 m of travel straddles the origin
    offset = -rot @ np.array([40.0, 0.0]) + rng.uniform(-10.0, 10.0, size=2)
    return theta, rot, offset


def _apply(points, rot, offset):
    return np.asarray(points) @ rot.T + offset


@dataclass
class _Vehicle:
    path: _Path
    s: float
    v: float
    v0: float
    length: float
    width: float
    static: bool = False
    pose: tuple = None


def _curvature_speed_limit(path: _Path, v_max):
    head = path.heading
    dh = np.abs(np.diff(np.unwrap(head)))
    kappa = np.concatenate([dh / np.maximum(path.seg_len[1:], 1e-6), [0.0]])
    return np.minimum(v_max, np.sqrt(LAT_ACCEL / np.maximum(kappa, 1e-9)))


def _vehicle_size(rng):
    return float(rng.uniform(4.2, 5.0)), float(rng.uniform(1.8, 2.1))


def _rect(x, y, yaw, length, width, pad=0.0):
    return np.array([x, y, length + 2 * pad, width + 2 * pad, yaw])


def _leader(i, paths, xy, speeds, headings, widths, lengths, s_self):
    """Nearest object ahead of vehicle i along its path: (gap, v_lead)."""
    path = paths[i]
    idx = [j for j in range(len(xy)) if j != i]
    if not idx:
        return math.inf, 0.0
    s, lat, head = path.project(xy[idx])
    w = widths[idx]
    ok = (s > s_self) & (np.abs(lat) < 0.5 * (widths[i] + w) + 0.3) & (s - s_self < 80.0)
    if not ok.any():
        return math.inf, 0.0
    k = np.flatnonzero(ok)[np.argmin(s[ok])]
    j = idx[k]
    gap = s[k] - s_self - 0.5 * (lengths[i] + lengths[j])
    v_lead = speeds[j] * math.cos(headings[j] - head[k])
    return gap, v_lead


def _pure_pursuit(state, path: _Path, s_proj):
    tx, ty, _ = path.pose_at(s_proj + LOOKAHEAD)
    dx, dy = tx - state[0], ty - state[1]
    alpha = math.atan2(dy, dx) - state[2]
    ld = max(math.hypot(dx, dy), 1e-3)
    return float(np.clip(2.0 * math.sin(alpha) / ld, *STEER_RANGE))


def _attempt(spec, rng, horizon, f):
    layout = _LAYOUTS[spec.family](rng, spec)
    theta, rot, offset = _transform(rng)
    edges = [_apply(e, rot, offset) for e in layout.edges]
    lanes = {k: _Path(_apply(v, rot, offset), extend=50.0) for k, v in layout.lanes.items()}
    ego_path = _Path(_apply(layout.ego_path, rot, offset), extend=50.0)
    starts = np.concatenate([e[:-1] for e in edges])
    ends = np.concatenate([e[1:] for e in edges])

    v_max = float(rng.uniform(9.0, 13.0))
    ego_len, ego_w = _vehicle_size(rng)
    v_init = float(rng.uniform(1.0, 3.0) if spec.family == "parking" else rng.uniform(2.0, 5.0))
    x0, y0, yaw0 = ego_path.pose_at(0.0)
    vehicles = [_Vehicle(ego_path, 0.0, v_init, v_max, ego_len, ego_w)]
    rects = [_rect(x0, y0, yaw0, ego_len, ego_w, pad=1.0)]

    n_parked = 0
    if layout.parked:
        n_parked = min(len(layout.parked), spec.traffic_density // 2 + (spec.traffic_density % 2))
    order = rng.permutation(len(layout.parked))[:n_parked] if n_parked else []
    for k in order:
        px, py, pyaw = layout.parked[k]
        (wx, wy), wyaw = _apply([px, py], rot, offset), pyaw + theta
        ln, wd = _vehicle_size(rng)
        r = _rect(wx, wy, wyaw, ln, wd)
        if obb_overlap_many(r, np.array(rects)).any():
            return None
        vehicles.append(_Vehicle(None, 0.0, 0.0, 0.0, ln, wd, static=True,
                                 pose=(float(wx), float(wy), float(wyaw))))
        rects.append(_rect(wx, wy, wyaw, ln, wd, pad=0.5))

    names = sorted(layout.spawn)
    for _ in range(spec.traffic_density - n_parked):
        for _try in range(20):
            lane = names[int(rng.integers(len(names)))]
            lo, hi = layout.spawn[lane]
            s0 = float(rng.uniform(lo, hi))
            ln, wd = _vehicle_size(rng)
            x, y, yaw = lanes[lane].pose_at(s0)
            r = _rect(x, y, yaw, ln, wd, pad=0.5)
            if not obb_overlap_many(r, np.array(rects)).any():
                break
        else:
            return None
        v0 = float(rng.uniform(6.0, 12.0))
        vehicles.append(_Vehicle(lanes[lane], s0, float(rng.uniform(0.5, 1.0)) * v0, v0, ln, wd))
        rects.append(r)

    n = len(vehicles)
    speed_cap = _curvature_speed_limit(ego_path, v_max)
    lengths = np.array([v.length for v in vehicles])
    widths = np.array([v.width for v in vehicles])
    logs = np.zeros((n, horizon, 5))
    ego_state = np.array([x0, y0, yaw0, v_init * math.cos(yaw0), v_init * math.sin(yaw0)])
    idm = IdmParams()
    paths = [v.path for v in vehicles]

    def poses():
        out = np.zeros((n, 5))
        out[0] = ego_state
        for i in range(1, n):
            veh = vehicles[i]
            if veh.static:
                out[i, :3] = veh.pose
            else:
                x, y, yaw = veh.path.pose_at(veh.s)
                out[i] = [x, y, yaw, veh.v * math.cos(yaw), veh.v * math.sin(yaw)]
        return out

    for t in range(horizon):
        cur = poses()
        logs[:, t] = cur
        if t == horizon - 1:
            break
        xy = cur[:, :2]
        speeds = np.hypot(cur[:, 3], cur[:, 4])
        heads = cur[:, 2]
        # ego expert
        s_ego, _, _ = ego_path.project(ego_state[None, :2])
        s_ego = float(s_ego[0])
        k0 = np.searchsorted(ego_path.cum, s_ego)
        k1 = np.searchsorted(ego_path.cum, s_ego + 40.0)
        v0 = float(speed_cap[min(k0, len(speed_cap) - 1):max(k1, k0 + 1)].min())
        gap, v_lead = _leader(0, paths, xy, speeds, heads, widths, lengths, s_ego)
        acc = idm_accel(speeds[0], v_lead, gap, IdmParams(desired_speed=v0))
        acc = max(acc, -speeds[0] * f)
        steer = _pure_pursuit(ego_state, ego_path, s_ego)
        if speeds[0] / f + acc / (2 * f * f) < 1e-6:
            steer = 0.0
        ego_state = np.asarray(step_bicycle(ego_state, (acc, steer), f), dtype=float)
        # lane followers
        for i in range(1, n):
            veh = vehicles[i]
            if veh.static:
                continue
            gap, v_lead = _leader(i, paths, xy, speeds, heads, widths, lengths, veh.s)
            a = idm_accel(veh.v, v_lead, gap, IdmParams(desired_speed=veh.v0))
            a = max(a, -veh.v * f)
            veh.s += veh.v / f + a / (2 * f * f)
            veh.v = max(0.0, veh.v + a / f)

    logs = canonical(logs)
    ego_log = logs[0]
    for t in range(horizon):
        e = ego_log[t]
        r = _rect(e[0], e[1], e[2], ego_len, ego_w, pad=CLEARANCE)
        if obb_hits_segments(r, starts, ends).any():
            return None
        others = np.array([_rect(*logs[i, t, :3], lengths[i], widths[i]) for i in range(1, n)]).reshape(-1, 5)
        if len(others) and obb_overlap_many(r, others).any():
            return None
    # t=0: no pair overlaps
    r0 = np.array([_rect(*logs[i, 0, :3], lengths[i], widths[i]) for i in range(n)])
    for i in range(n):
        if obb_overlap_many(r0[i], np.delete(r0, i, axis=0)).any():
            return None

    agents = [AgentLog(width=float(canonical(widths[i])), length=float(canonical(lengths[i])),
                       states=logs[i], kind="vehicle") for i in range(n)]
    return edges, agents


def generate_scenario(spec: ScenarioFamilySpec, horizon_steps: int = 80, frequency_hz: float = 10.0) -> Scenario:
    """Deterministic procedural scenario for ``spec``.

    Raises :class:`GenerationFailed` when 100 attempts cannot produce a
    collision-free, on-road expert log (typically an over-dense spec).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    for _ in range(MAX_ATTEMPTS):
        out = _attempt(spec, rng, horizon_steps, frequency_hz)
        if out is None:
            continue
        edges, agents = out
        polylines = [canonical(e) for e in edges]
        s = Scenario(
            id=f"{spec.family}-d{spec.traffic_density}-s{spec.seed}",
            map_polylines=polylines,
            routing=routing_from_log(agents[0].states),
            agents=agents,
            ego_index=0,
            horizon_steps=horizon_steps,
            frequency_hz=frequency_hz,
        )
        return s.validate()
    raise GenerationFailed(f"could not satisfy constraints for {spec} in {MAX_ATTEMPTS} attempts")


def generate_family_set(family: str, count: int, seed: int, density=None, curvature: float = 0.0) -> list:
    """``count`` scenarios of one family with per-scenario derived seeds."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        d = int(rng.integers(0, 5)) if density is None else int(density)
        out.append(generate_scenario(ScenarioFamilySpec(family, d, curvature, seed * 100003 + i)))
    return out
