"""State transitions (bicycle and delta) and inverse dynamics.

States are ``(x, y, yaw, vx, vy)``; every function also accepts stacked
``(N, 5)`` arrays so rollouts can advance many agents at once.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .geometry import wrap_angle

FREQUENCY_HZ = 10.0
ACC_RANGE = (-6.0, 6.0)
STEER_RANGE = (-0.3, 0.3)
DEGENERATE_TRAVEL = 1e-6


class AgentState(NamedTuple):
    x: float
    y: float
    yaw: float
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))


class BicycleAction(NamedTuple):
    acc: float
    steer: float


class WaypointAction(NamedTuple):
    dx: float
    dy: float
    dyaw: float


def clip_bicycle(action):
    a = np.asarray(action, dtype=float)
    out = np.empty_like(a)
    out[..., 0] = np.clip(a[..., 0], *ACC_RANGE)
    out[..., 1] = np.clip(a[..., 1], *STEER_RANGE)
    return out


def _pack(arr, like):
    if np.ndim(arr) == 1 and not isinstance(like, np.ndarray):
        return AgentState(*map(float, arr))
    return arr


def step_bicycle(s, a, f: float = FREQUENCY_HZ, updated_yaw: bool = True):
    """Advance one control period under the bicycle transition.

    Actions are clamped to the acc/steer ranges.  Speed is floored at zero
    (no reversing).  ``updated_yaw`` selects whether the new velocity vector
    points along the post-update heading (default) or the pre-update one.
    """
    st = np.asarray(s, dtype=float)
    act = clip_bicycle(a)
    x, y, yaw, vx, vy = (st[..., i] for i in range(5))
    acc, steer = act[..., 0], act[..., 1]
    v = np.hypot(vx, vy)
    half = acc / (2.0 * f * f)
    c, sn = np.cos(yaw), np.sin(yaw)
    out = np.empty(np.broadcast(st[..., 0], acc).shape + (5,))
    out[..., 0] = x + vx / f + half * c
    out[..., 1] = y + vy / f + half * sn
    new_yaw = wrap_angle(yaw + steer * (v / f + half))
    out[..., 2] = new_yaw
    v_new = np.maximum(0.0, v + acc / f)
    heading = new_yaw if updated_yaw else yaw
    out[..., 3] = v_new * np.cos(heading)
    out[..., 4] = v_new * np.sin(heading)
    return _pack(out, s)


def step_delta(s, a, f: float = FREQUENCY_HZ):
    """Apply an ego-frame displacement directly (may be kinematically infeasible)."""
    st = np.asarray(s, dtype=float)
    act = np.asarray(a, dtype=float)
    yaw = st[..., 2]
    c, sn = np.cos(yaw), np.sin(yaw)
    dxw = c * act[..., 0] - sn * act[..., 1]
    dyw = sn * act[..., 0] + c * act[..., 1]
    out = np.empty(np.broadcast(yaw, act[..., 0]).shape + (5,))
    out[..., 0] = st[..., 0] + dxw
    out[..., 1] = st[..., 1] + dyw
    out[..., 2] = wrap_angle(yaw + act[..., 2])
    out[..., 3] = (out[..., 0] - st[..., 0]) * f
    out[..., 4] = (out[..., 1] - st[..., 1]) * f
    return _pack(out, s)


def infer_bicycle_action(s, s_next, f: float = FREQUENCY_HZ, with_flag: bool = False):
    """Recover ``(acc, steer)`` that maps ``s`` to ``s_next`` under the bicycle model.

    When the distance term ``|v|/f + acc/(2 f^2)`` is below 1e-6 the steer
    is unobservable and set to 0; ``with_flag=True`` additionally returns
    that degenerate-speed flag.
    """
    st = np.asarray(s, dtype=float)
    nx = np.asarray(s_next, dtype=float)
    v = np.hypot(st[..., 3], st[..., 4])
    v_next = np.hypot(nx[..., 3], nx[..., 4])
    acc = (v_next - v) * f
    travel = v / f + acc / (2.0 * f * f)
    degenerate = travel < DEGENERATE_TRAVEL
    dyaw = wrap_angle(nx[..., 2] - st[..., 2])
    steer = np.where(degenerate, 0.0, dyaw / np.where(degenerate, 1.0, travel))
    if np.ndim(acc) == 0:
        out = BicycleAction(float(acc), float(steer))
        flag = bool(degenerate)
    else:
        out = np.stack([acc, steer], axis=-1)
        flag = degenerate
    return (out, flag) if with_flag else out


def infer_waypoint_action(s, s_next):
    """Displacement from ``s`` to ``s_next`` expressed in the frame of ``s``."""
    st = np.asarray(s, dtype=float)
    nx = np.asarray(s_next, dtype=float)
    yaw = st[..., 2]
    c, sn = np.cos(yaw), np.sin(yaw)
    dx = nx[..., 0] - st[..., 0]
    dy = nx[..., 1] - st[..., 1]
    fwd = c * dx + sn * dy
    lat = -sn * dx + c * dy
    dyaw = wrap_angle(nx[..., 2] - yaw)
    if np.ndim(fwd) == 0:
        return WaypointAction(float(fwd), float(lat), float(dyaw))
    return np.stack([fwd, lat, dyaw], axis=-1)


def expert_actions(states, mode: str = "bicycle", f: float = FREQUENCY_HZ) -> np.ndarray:
    """Ground-truth actions for every consecutive pair of a logged trajectory."""
    st = np.asarray(states, dtype=float)
    if mode == "bicycle":
        return infer_bicycle_action(st[:-1], st[1:], f)
    if mode == "waypoint":
        return infer_waypoint_action(st[:-1], st[1:])
    raise ValueError(f"unknown action mode {mode!r}")
