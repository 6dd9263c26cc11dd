"""Closed-loop episode engine: agent control, violations, rewards, metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import step_bicycle, step_delta
from .errors import EmptySet, SteppedAfterDone, ValidationError
from .geometry import obb_hits_segments, obb_overlap_many, polyline_length, polyline_nearest, wrap_angle
from .scenario import Scenario

B_MAX = 4.0
STATIC_SPEED = 0.5


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 10.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfortable_decel: float = 2.5
    exponent: float = 4.0


def idm_accel(v: float, v_lead: float, gap: float, p: IdmParams = IdmParams()) -> float:
    """Intelligent driver model acceleration, clamped to [-4, max_accel].

    ``gap`` is bumper-to-bumper distance; pass ``math.inf`` for a free road.
    """
    a = p.max_accel
    free = 1.0 - (v / p.desired_speed) ** p.exponent if p.desired_speed > 0 else -1.0
    if math.isinf(gap):
        interaction = 0.0
    else:
        s_star = p.min_gap + max(0.0, v * p.time_headway + v * (v - v_lead) / (2.0 * math.sqrt(a * p.comfortable_decel)))
        interaction = (s_star / max(gap, 1e-3)) ** 2
    return float(min(max(a * (free - interaction), -B_MAX), a))


@dataclass(frozen=True)
class RewardConfig:
    w_s: float = 1.0
    w_o: float = -1.0
    w_c: float = -1.0
    w_w: float = -1.0
    delta_yaw: float = 1.0
    delta_dis: float = 3.5
    wrongway_rule: str = "or"

    def __post_init__(self):
        if not (self.delta_yaw > 0 and self.delta_dis > 0):
            raise ValidationError("wrong-way thresholds must be positive")
        if self.wrongway_rule not in ("or", "and"):
            raise ValidationError("wrongway_rule must be 'or' or 'and'")


@dataclass(frozen=True)
class ViolationFlags:
    offroad: bool = False
    collision: bool = False
    wrongway: bool = False


@dataclass(frozen=True)
class RewardBreakdown:
    r_speed: float
    r_offroad: float
    r_collision: float
    r_wrongway: float
    total: float


@dataclass(frozen=True)
class SimConfig:
    mode: str = "non_reactive"
    transition: str = "bicycle"
    reward: RewardConfig = RewardConfig()
    idm: IdmParams = IdmParams()
    arrival_threshold: float = 90.0
    terminate_on_arrival: bool = True
    updated_yaw: bool = True
    # reactive agents treat the ego as a potential leader
    ego_visible_to_idm: bool = True

    def __post_init__(self):
        if self.mode not in ("non_reactive", "reactive"):
            raise ValidationError(f"unknown agent mode {self.mode!r}")
        if self.transition not in ("bicycle", "delta"):
            raise ValidationError(f"unknown transition {self.transition!r}")


class _Path:
    """Arclength-parameterised polyline with straight extrapolation past its end."""

    def __init__(self, points, extend=200.0):
        p = np.asarray(points, dtype=float)
        d = p[-1] - p[-2]
        p = np.vstack([p, p[-1] + d / np.hypot(*d) * extend])
        self.points = p
        seg = np.diff(p, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.heading = np.arctan2(seg[:, 1], seg[:, 0])
        self.dir = seg / self.seg_len[:, None]

    def pose_at(self, s):
        k = int(np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1))
        xy = self.points[k] + self.dir[k] * (s - self.cum[k])
        return xy[0], xy[1], self.heading[k]

    def project(self, q):
        """Arclength and signed lateral offset (left positive) for points (M, 2)."""
        q = np.asarray(q, dtype=float).reshape(-1, 2)
        a = self.points[:-1]
        rel = q[:, None, :] - a[None]
        t = np.clip(np.einsum("msd,sd->ms", rel, self.dir), 0.0, self.seg_len[None])
        foot = a[None] + t[..., None] * self.dir[None]
        diff = q[:, None, :] - foot
        dist = np.hypot(diff[..., 0], diff[..., 1])
        k = np.argmin(dist, axis=1)
        rows = np.arange(len(q))
        s = self.cum[k] + t[rows, k]
        d = self.dir[k]
        r = rel[rows, k]
        lat = d[:, 0] * r[:, 1] - d[:, 1] * r[:, 0]
        return s, np.where(lat >= 0, 1.0, -1.0) * dist[rows, k], self.heading[k]


class SceneContext:
    """Per-scenario static data reused across steps and episodes."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.seg_starts, self.seg_ends = scenario.road_segments()
        self.routing = scenario.routing
        self.route_length = polyline_length(scenario.routing)
        self.ego_index = scenario.ego_index
        self.others = [i for i in range(len(scenario.agents)) if i != scenario.ego_index]
        self.dims = np.array([[a.length, a.width] for a in scenario.agents])
        self.log_speed = np.array([np.hypot(a.states[:, 3], a.states[:, 4]) for a in scenario.agents])
        self._paths = None

    @property
    def paths(self):
        if self._paths is None:
            from .geometry import dedupe_points
            paths = []
            for i, a in enumerate(self.scenario.agents):
                pts = dedupe_points(a.states[:, :2], tol=1e-3)
                static = len(pts) < 2 or self.log_speed[i].max() < STATIC_SPEED
                paths.append(None if static else _Path(pts))
            self._paths = paths
        return self._paths

    def agent_rects(self, states, idx=None):
        """``[x, y, length, width, yaw]`` boxes for agents ``idx`` (default all)."""
        dims = self.dims if idx is None else self.dims[idx]
        r = np.empty((len(states), 5))
        r[:, 0:2] = states[:, 0:2]
        r[:, 2:4] = dims
        r[:, 4] = states[:, 2]
        return r


@dataclass(frozen=True)
class EpisodeRecord:
    scenario_id: str
    ego_states: tuple
    actions: tuple
    rewards: tuple
    flags: tuple
    progress: tuple
    route_length: float
    arrival_threshold: float = 90.0


@dataclass(frozen=True)
class SimState:
    step: int
    agent_states: np.ndarray
    done: bool
    arrival: bool
    flags_history: tuple
    context: SceneContext = field(repr=False, compare=False)
    config: SimConfig = field(repr=False, compare=False)
    idm_s: np.ndarray = field(default=None, repr=False, compare=False)
    idm_v: np.ndarray = field(default=None, repr=False, compare=False)
    progress: tuple = ()
    actions: tuple = ()
    rewards: tuple = ()
    ego_history: tuple = ()

    @property
    def ego_state(self) -> np.ndarray:
        return self.agent_states[self.context.ego_index]

    @property
    def max_progress(self) -> float:
        return max(self.progress) if self.progress else 0.0

    def record(self) -> EpisodeRecord:
        return EpisodeRecord(
            scenario_id=self.context.scenario.id,
            ego_states=self.ego_history,
            actions=self.actions,
            rewards=self.rewards,
            flags=self.flags_history,
            progress=self.progress,
            route_length=self.context.route_length,
            arrival_threshold=self.config.arrival_threshold,
        )


# -- predicates ----------------------------------------------------------

def ego_rect(state, length, width):
    return np.array([state[0], state[1], length, width, state[2]])


def is_offroad(rect, seg_starts, seg_ends) -> bool:
    return bool(obb_hits_segments(rect, seg_starts, seg_ends).any())


def is_collision(rect, other_rects) -> bool:
    return bool(obb_overlap_many(rect, other_rects).any())


def wrongway_terms(state, routing):
    """(heading error, distance) of the ego against its logged route."""
    _, dist, heading = polyline_nearest(state[:2], routing)
    return abs(wrap_angle(state[2] - heading)), dist


def compute_flags(ctx: SceneContext, states, cfg: RewardConfig) -> ViolationFlags:
    e = ctx.ego_index
    length, width = ctx.dims[e]
    rect = ego_rect(states[e], length, width)
    offroad = is_offroad(rect, ctx.seg_starts, ctx.seg_ends)
    others = ctx.agent_rects(states[ctx.others], ctx.others) if ctx.others else np.zeros((0, 5))
    collision = is_collision(rect, others)
    yaw_err, dist = wrongway_terms(states[e], ctx.routing)
    yaw_bad, dis_bad = yaw_err > cfg.delta_yaw, dist > cfg.delta_dis
    wrongway = (yaw_bad or dis_bad) if cfg.wrongway_rule == "or" else (yaw_bad and dis_bad)
    return ViolationFlags(offroad, collision, bool(wrongway))


def route_progress(ctx: SceneContext, xy) -> float:
    s, _, _ = polyline_nearest(xy, ctx.routing)
    return min(100.0, 100.0 * s / ctx.route_length) if ctx.route_length > 0 else 100.0


def reward_from(ego_speed: float, log_speed: float, flags: ViolationFlags, cfg: RewardConfig) -> RewardBreakdown:
    # speed deviation is a penalty: r_speed <= 0 with w_s = +1
    r_speed = -abs(log_speed - ego_speed)
    r_o, r_c, r_w = float(flags.offroad), float(flags.collision), float(flags.wrongway)
    total = cfg.w_s * r_speed + cfg.w_o * r_o + cfg.w_c * r_c + cfg.w_w * r_w
    return RewardBreakdown(r_speed, r_o, r_c, r_w, total)


def compute_reward(sim: SimState, scenario: Scenario = None, cfg: RewardConfig = None) -> RewardBreakdown:
    """Reward for the current state of ``sim`` (flags must already be computed)."""
    cfg = cfg or sim.config.reward
    ctx = sim.context
    t = min(sim.step, ctx.scenario.horizon_steps - 1)
    ego = sim.ego_state
    return reward_from(float(np.hypot(ego[3], ego[4])), float(ctx.log_speed[ctx.ego_index, t]),
                       sim.flags_history[-1], cfg)


# -- episode -------------------------------------------------------------

def _override_ego(state, pose):
    speed = float(np.hypot(state[3], state[4]))
    x, y, yaw = (pose.x, pose.y, pose.yaw) if hasattr(pose, "x") else pose
    yaw = wrap_angle(yaw)
    return np.array([x, y, yaw, speed * math.cos(yaw), speed * math.sin(yaw)])


def reset(scenario, mode: str = None, init_override=None, config: SimConfig = None,
          context: SceneContext = None) -> SimState:
    """Start an episode at the t=0 logged states.

    ``init_override`` replaces the ego pose; its logged speed is kept and
    re-aimed along the new heading.
    """
    config = config or SimConfig()
    if mode is not None and mode != config.mode:
        config = replace(config, mode=mode)
    ctx = context or SceneContext(scenario)
    states = np.array([a.states[0] for a in ctx.scenario.agents], dtype=float)
    e = ctx.ego_index
    if init_override is not None:
        states[e] = _override_ego(states[e], init_override)
    idm_s = idm_v = None
    if config.mode == "reactive":
        idm_s = np.zeros(len(states))
        idm_v = ctx.log_speed[:, 0].copy()
    flags = compute_flags(ctx, states, config.reward)
    progress = route_progress(ctx, states[e, :2])
    arrival = _arrived(progress, (flags,), config)
    done = (arrival and config.terminate_on_arrival) or ctx.scenario.horizon_steps <= 1
    return SimState(0, states, done, arrival, (flags,), ctx, config, idm_s, idm_v,
                    (progress,), (), (), (tuple(states[e]),))


def _arrived(progress, flags_history, config) -> bool:
    clean = not any(f.offroad or f.collision for f in flags_history)
    return progress > config.arrival_threshold and clean


def _reactive_update(sim: SimState, t_next: int, ego_next):
    ctx, cfg = sim.context, sim.config
    states = sim.agent_states
    n = len(states)
    s_new, v_new = sim.idm_s.copy(), sim.idm_v.copy()
    out = np.array([a.states[t_next] for a in ctx.scenario.agents], dtype=float)
    f = ctx.scenario.frequency_hz
    for i in ctx.others:
        path = ctx.paths[i]
        if path is None:
            continue
        cands = [j for j in range(n) if j != i and (cfg.ego_visible_to_idm or j != ctx.ego_index)]
        gap, v_lead = math.inf, 0.0
        if cands:
            s_c, lat, head = path.project(states[cands, :2])
            w = ctx.dims[cands, 1]
            ahead = (s_c > sim.idm_s[i]) & (np.abs(lat) < 0.5 * (ctx.dims[i, 1] + w) + 0.5) \
                & (s_c - sim.idm_s[i] < 100.0)
            if ahead.any():
                k = np.flatnonzero(ahead)[np.argmin(s_c[ahead])]
                j = cands[k]
                gap = s_c[k] - sim.idm_s[i] - 0.5 * (ctx.dims[i, 0] + ctx.dims[j, 0])
                vj = states[j, 3:5]
                v_lead = float(vj[0] * math.cos(head[k]) + vj[1] * math.sin(head[k]))
        p = replace(cfg.idm, desired_speed=float(ctx.log_speed[i].max()))
        a = idm_accel(float(sim.idm_v[i]), v_lead, gap, p)
        a = max(a, -sim.idm_v[i] * f)
        s_new[i] = sim.idm_s[i] + sim.idm_v[i] / f + a / (2 * f * f)
        v_new[i] = max(0.0, sim.idm_v[i] + a / f)
        x, y, yaw = path.pose_at(s_new[i])
        out[i] = [x, y, yaw, v_new[i] * math.cos(yaw), v_new[i] * math.sin(yaw)]
    out[ctx.ego_index] = ego_next
    return out, s_new, v_new


def step(sim: SimState, ego_action, transition: str = None):
    """Advance one control period.  Returns ``(next_state, reward_breakdown)``."""
    if sim.done:
        raise SteppedAfterDone("episode already finished")
    cfg = sim.config
    transition = transition or cfg.transition
    ctx = sim.context
    f = ctx.scenario.frequency_hz
    e = ctx.ego_index
    action = np.asarray(ego_action, dtype=float)
    if transition == "bicycle":
        ego_next = step_bicycle(sim.ego_state, action, f, cfg.updated_yaw)
    elif transition == "delta":
        ego_next = step_delta(sim.ego_state, action, f)
    else:
        raise ValidationError(f"unknown transition {transition!r}")
    ego_next = np.asarray(ego_next, dtype=float)
    t_next = sim.step + 1
    idm_s, idm_v = sim.idm_s, sim.idm_v
    if cfg.mode == "reactive":
        states, idm_s, idm_v = _reactive_update(sim, t_next, ego_next)
    else:
        states = np.array([a.states[t_next] for a in ctx.scenario.agents], dtype=float)
        states[e] = ego_next
    flags = compute_flags(ctx, states, cfg.reward)
    history = sim.flags_history + (flags,)
    progress = route_progress(ctx, states[e, :2])
    reward = reward_from(float(np.hypot(states[e, 3], states[e, 4])),
                         float(ctx.log_speed[e, t_next]), flags, cfg.reward)
    arrival = sim.arrival or _arrived(progress, history, cfg)
    done = t_next >= ctx.scenario.horizon_steps - 1 or (arrival and cfg.terminate_on_arrival)
    nxt = SimState(t_next, states, done, arrival, history, ctx, cfg, idm_s, idm_v,
                   sim.progress + (progress,), sim.actions + (tuple(action.tolist()),),
                   sim.rewards + (reward,), sim.ego_history + (tuple(states[e]),))
    return nxt, reward


# -- metrics -------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeMetrics:
    offroad_flagged: bool
    collision_flagged: bool
    progress_ratio: float
    arrived: bool

    def as_dict(self):
        return {"offroad_flagged": self.offroad_flagged, "collision_flagged": self.collision_flagged,
                "progress_ratio": self.progress_ratio, "arrived": self.arrived}


def compute_metrics(episode: EpisodeRecord, scenario: Scenario = None) -> EpisodeMetrics:
    if scenario is not None and episode.ego_states:
        ctx_route = scenario.routing
        total = polyline_length(ctx_route)
        best = max(polyline_nearest(s[:2], ctx_route)[0] for s in episode.ego_states)
        pr = min(100.0, 100.0 * best / total)
    else:
        pr = max(episode.progress) if episode.progress else 0.0
    off = any(f.offroad for f in episode.flags)
    col = any(f.collision for f in episode.flags)
    arrived = pr > episode.arrival_threshold and not off and not col
    return EpisodeMetrics(off, col, float(pr), arrived)


@dataclass(frozen=True)
class BenchmarkReport:
    AR: float
    OR: float
    CR: float
    PR: float
    n_episodes: int

    def as_dict(self):
        return {"AR": self.AR, "OR": self.OR, "CR": self.CR, "PR": self.PR, "n_episodes": self.n_episodes}


def aggregate(metrics) -> BenchmarkReport:
    metrics = list(metrics)
    if not metrics:
        raise EmptySet("cannot aggregate zero episodes")
    n = len(metrics)
    return BenchmarkReport(
        AR=100.0 * sum(m.arrived for m in metrics) / n,
        OR=100.0 * sum(m.offroad_flagged for m in metrics) / n,
        CR=100.0 * sum(m.collision_flagged for m in metrics) / n,
        PR=float(sum(m.progress_ratio for m in metrics) / n),
        n_episodes=n,
    )


def run_episode(scenario, policy, config: SimConfig = None, init_override=None, context=None):
    """Drive ``policy(sim_state) -> action`` until done; return the final state."""
    sim = reset(scenario, config=config, init_override=init_override, context=context)
    while not sim.done:
        sim, _ = step(sim, policy(sim))
    return sim


def expert_policy(scenario, mode: str = "bicycle"):
    """Open-loop replay of the actions inferred from the ego log."""
    from .dynamics import expert_actions
    acts = expert_actions(scenario.ego.states, mode, scenario.frequency_hz)
    return lambda sim: acts[sim.step]


def write_episode_csv(record: EpisodeRecord, path) -> None:
    """Per-step table: pose, speed, action, flags and reward terms."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "x", "y", "yaw", "speed", "action_0", "action_1", "action_2",
                    "offroad", "collision", "wrongway", "r_speed", "r_offroad", "r_collision",
                    "r_wrongway", "reward", "progress"])
        for t, st in enumerate(record.ego_states):
            act = list(record.actions[t - 1]) if t > 0 else []
            act = (act + ["", "", ""])[:3]
            r = record.rewards[t - 1] if t > 0 else None
            fl = record.flags[t]
            terms = [r.r_speed, r.r_offroad, r.r_collision, r.r_wrongway, r.total] if r else ["", "", "", "", ""]
            w.writerow([t] + [_fmt(v) for v in st[:3]] + [_fmt(math.hypot(st[3], st[4]))]
                       + [_fmt(v) if v != "" else "" for v in act]
                       + [int(fl.offroad), int(fl.collision), int(fl.wrongway)]
                       + [_fmt(v) if v != "" else "" for v in terms] + [_fmt(record.progress[t])])


def _fmt(v) -> str:
    return format(float(v), ".9g")
