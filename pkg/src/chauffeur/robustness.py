"""Ego-shifting: bounded random perturbations of the ego's start pose and sweeps over them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import simulator as sim_mod
from .errors import ValidationError
from .geometry import Pose, ego_to_world, wrap_angle
from .training.evaluate import benchmark, run_episodes

SHIFT_MODES = ("axis", "yaw", "both")
SWEEP_FIELDS = ["max_xy", "max_yaw", "AR", "OR", "CR", "PR", "episodes", "applied_fraction"]


@dataclass(frozen=True)
class ShiftConfig:
    max_xy: float = 0.0
    max_yaw: float = 0.0
    mode: str = "both"
    sigma_frac: float = 0.5
    max_retries: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_xy < 0 or self.max_yaw < 0:
            raise ValidationError("shift bounds must be non-negative")
        if self.mode not in SHIFT_MODES:
            raise ValidationError(f"unknown shift mode {self.mode!r}")
        if self.sigma_frac <= 0 or self.max_retries < 0:
            raise ValidationError("invalid sigma_frac / max_retries")


@dataclass(frozen=True)
class ShiftOutcome:
    applied: bool
    dx: float = 0.0
    dy: float = 0.0
    dyaw: float = 0.0
    attempts: int = 0


def _truncated(rng, bound, sigma_frac):
    if bound == 0:
        return 0.0
    sigma = sigma_frac * bound
    while True:
        v = float(rng.normal(0.0, sigma))
        if abs(v) <= bound:
            return v


def sample_shift(cfg: ShiftConfig, rng: np.random.Generator):
    """``(dx, dy, dyaw)`` with each component a normal truncated to its bound."""
    dx = dy = dyaw = 0.0
    # draw order is fixed so equal seeds give comparable samples across modes
    if cfg.mode in ("axis", "both"):
        dx = _truncated(rng, cfg.max_xy, cfg.sigma_frac)
        dy = _truncated(rng, cfg.max_xy, cfg.sigma_frac)
    if cfg.mode in ("yaw", "both"):
        dyaw = _truncated(rng, cfg.max_yaw, cfg.sigma_frac)
    return dx, dy, dyaw


def shifted_pose(scenario, dx, dy, dyaw) -> Pose:
    """Apply a shift expressed in the ego's initial frame (dx forward, dy left)."""
    s0 = scenario.ego.states[0]
    x, y = ego_to_world(np.array([dx, dy]), (float(s0[0]), float(s0[1]), float(s0[2])))
    return Pose(float(x), float(y), float(wrap_angle(s0[2] + dyaw)))


def validate_shift(scenario, pose, context: sim_mod.SceneContext = None) -> bool:
    """True iff the ego box at ``pose`` is on-road and clear of every t=0 agent."""
    ctx = context or sim_mod.SceneContext(scenario)
    e = ctx.ego_index
    length, width = ctx.dims[e]
    p = pose.as_array() if hasattr(pose, "as_array") else np.asarray(pose, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValidationError("shifted pose must be finite")
    rect = sim_mod.ego_rect(p, length, width)
    if sim_mod.is_offroad(rect, ctx.seg_starts, ctx.seg_ends):
        return False
    if ctx.others:
        states0 = np.array([scenario.agents[i].states[0] for i in ctx.others])
        if sim_mod.is_collision(rect, ctx.agent_rects(states0, ctx.others)):
            return False
    return True


def choose_shift(scenario, cfg: ShiftConfig, rng, context=None):
    """Retry sampling until a valid pose is found.  Returns ``(pose or None, outcome)``."""
    for attempt in range(1, cfg.max_retries + 1):
        dx, dy, dyaw = sample_shift(cfg, rng)
        if dx == 0.0 and dy == 0.0 and dyaw == 0.0:
            # a null shift keeps the logged start state bit-for-bit
            return None, ShiftOutcome(True, 0.0, 0.0, 0.0, attempt)
        pose = shifted_pose(scenario, dx, dy, dyaw)
        if validate_shift(scenario, pose, context):
            out = ShiftOutcome(True, dx, dy, dyaw, attempt)
            check_outcome(out, cfg)
            return pose, out
    return None, ShiftOutcome(False, 0.0, 0.0, 0.0, cfg.max_retries)


def check_outcome(out: ShiftOutcome, cfg: ShiftConfig) -> None:
    assert abs(out.dx) <= cfg.max_xy and abs(out.dy) <= cfg.max_xy and abs(out.dyaw) <= cfg.max_yaw
    if not out.applied:
        assert out.dx == out.dy == out.dyaw == 0.0


def shifted_reset(scenario, cfg: ShiftConfig, rng, sim_cfg: sim_mod.SimConfig = None, context=None):
    """Reset with a validated shift, or unshifted once retries run out."""
    ctx = context or sim_mod.SceneContext(scenario)
    pose, out = choose_shift(scenario, cfg, rng, ctx)
    return sim_mod.reset(scenario, config=sim_cfg, init_override=pose, context=ctx), out


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Per-episode stream shared by every sweep cell, so only the shift size differs."""
    return np.random.default_rng(np.random.SeedSequence([seed, episode]))


@dataclass
class SweepCell:
    max_xy: float
    max_yaw: float
    report: sim_mod.BenchmarkReport
    applied_fraction: float

    def row(self):
        r = self.report
        return [self.max_xy, self.max_yaw, r.AR, r.OR, r.CR, r.PR, r.n_episodes, self.applied_fraction]


def episode_list(scenarios, episodes: int):
    return [scenarios[e % len(scenarios)] for e in range(episodes)]


def shift_sweep(scenarios, act_fn, xy_grid, yaw_grid, episodes_per_cell: int, seed: int = 0,
                mode: str = "both", sim_cfg: sim_mod.SimConfig = None, tokenizer=None,
                max_retries: int = 10, jobs: int = 1):
    """One benchmark report per (max_xy, max_yaw) cell; ``yaw_grid`` is in radians."""
    if not xy_grid or not yaw_grid:
        raise ValidationError("shift grid must be non-empty")
    if not scenarios:
        raise ValidationError("no scenarios to evaluate")
    eps = episode_list(list(scenarios), episodes_per_cell)
    contexts = {s.id: sim_mod.SceneContext(s) for s in eps}
    kw = {} if tokenizer is None else {"tokenizer": tokenizer}
    cells = []
    for max_xy in xy_grid:
        for max_yaw in yaw_grid:
            cfg = ShiftConfig(max_xy=float(max_xy), max_yaw=float(max_yaw), mode=mode,
                              max_retries=max_retries, seed=seed)
            overrides, applied = [], 0
            for e, s in enumerate(eps):
                pose, out = choose_shift(s, cfg, episode_rng(seed, e), contexts[s.id])
                check_outcome(out, cfg)
                overrides.append(pose)
                applied += out.applied
            results = run_episodes(eps, act_fn, sim_cfg, init_overrides=overrides, jobs=jobs, **kw)
            cells.append(SweepCell(cfg.max_xy, cfg.max_yaw, benchmark(results), applied / len(eps)))
    return cells


def write_sweep_csv(cells, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for c in cells:
            w.writerow([format(float(v), ".9g") if isinstance(v, float) else v for v in c.row()])


def read_sweep_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "episodes" else float(v)) for k, v in r.items()} for r in rows]


def degrees(values):
    return [math.radians(float(v)) for v in values]
