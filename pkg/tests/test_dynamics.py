import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chauffeur.dynamics import (AgentState, BicycleAction, WaypointAction, clip_bicycle, expert_actions,
                                infer_bicycle_action, infer_waypoint_action, step_bicycle, step_delta)


def hand_bicycle(s, a, f=10.0):
    x, y, yaw, vx, vy = s
    acc, steer = a
    v = math.hypot(vx, vy)
    x2 = x + vx / f + acc / (2 * f * f) * math.cos(yaw)
    y2 = y + vy / f + acc / (2 * f * f) * math.sin(yaw)
    yaw2 = yaw + steer * (v / f + acc / (2 * f * f))
    v2 = v + acc / f
    return (x2, y2, yaw2, v2 * math.cos(yaw2), v2 * math.sin(yaw2))


class TestBicycle:
    def test_coast(self):
        np.testing.assert_allclose(step_bicycle((0, 0, 0, 5, 0), (0, 0)), (0.5, 0, 0, 5, 0), atol=1e-12)

    def test_accelerate(self):
        out = step_bicycle((0, 0, 0, 5, 0), (2, 0))
        assert out.x == pytest.approx(0.51, abs=1e-12)
        assert out.speed == pytest.approx(5.2, abs=1e-12)
        assert (out.vx, out.vy) == (pytest.approx(5.2, abs=1e-12), 0.0)

    def test_steer_uses_updated_yaw(self):
        out = step_bicycle((0, 0, 0, 5, 0), (0, 0.1))
        assert out.yaw == pytest.approx(0.05, abs=1e-12)
        assert out.x == pytest.approx(0.5, abs=1e-12)
        assert out.vx == pytest.approx(5 * math.cos(0.05), abs=1e-12)

    def test_pre_update_heading_variant(self):
        out = step_bicycle((0, 0, 0, 5, 0), (0, 0.1), updated_yaw=False)
        assert (out.vx, out.vy) == (5.0, 0.0)

    def test_action_clamped(self):
        np.testing.assert_array_equal(clip_bicycle([10, -1]), [6, -0.3])
        assert step_bicycle((0, 0, 0, 5, 0), (100, 0)) == step_bicycle((0, 0, 0, 5, 0), (6, 0))

    def test_no_reverse(self):
        out = step_bicycle((0, 0, 0, 0.1, 0), (-6, 0))
        assert out.speed == 0.0

    def test_batched_matches_scalar(self, rng):
        s = rng.normal(size=(20, 5))
        a = rng.uniform([-6, -0.3], [6, 0.3], size=(20, 2))
        batch = step_bicycle(s, a)
        for i in range(20):
            np.testing.assert_array_equal(batch[i], step_bicycle(s[i], a[i]))

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3), st.floats(0.5, 30),
           st.floats(-6, 6), st.floats(-0.3, 0.3))
    def test_hand_formula(self, x, y, yaw, v, acc, steer):
        s = (x, y, yaw, v * math.cos(yaw), v * math.sin(yaw))
        if v + acc / 10 < 0:
            return
        got = np.array(step_bicycle(s, (acc, steer)))
        want = np.array(hand_bicycle(s, (acc, steer)))
        np.testing.assert_allclose(got[[0, 1, 3, 4]], want[[0, 1, 3, 4]], atol=1e-9)
        assert abs(math.remainder(got[2] - want[2], 2 * math.pi)) < 1e-9


class TestDelta:
    def test_zero(self):
        out = step_delta((3, 4, 0.2, 5, 1), (0, 0, 0))
        assert (out.x, out.y, out.vx, out.vy) == (3, 4, 0, 0)

    def test_forward(self):
        out = step_delta((0, 0, 0, 0, 0), (0.5, 0, 0))
        assert (out.x, out.vx) == (0.5, 5.0)

    def test_rotated_frame(self):
        out = step_delta((0, 0, math.pi / 2, 0, 0), (0.5, 0, 0))
        assert out.y == pytest.approx(0.5, abs=1e-12)
        assert out.vy == pytest.approx(5.0, abs=1e-12)
        assert out.x == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3),
           st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1))
    def test_round_trip(self, x, y, yaw, dx, dy, dyaw):
        s = (x, y, yaw, 0, 0)
        w = infer_waypoint_action(s, step_delta(s, (dx, dy, dyaw)))
        np.testing.assert_allclose(w, (dx, dy, dyaw), atol=1e-9)


class TestInverse:
    def test_round_trip_example(self):
        s = (0, 0, 0, 5, 0)
        a = infer_bicycle_action(s, step_bicycle(s, (2, 0.1)))
        assert isinstance(a, BicycleAction)
        np.testing.assert_allclose(a, (2, 0.1), atol=1e-9)

    def test_stationary(self):
        a, flag = infer_bicycle_action((1, 1, 0.3, 0, 0), (1, 1, 0.3, 0, 0), with_flag=True)
        assert a == (0.0, 0.0) and flag

    def test_hand_steer(self):
        a = infer_bicycle_action((0, 0, 0, 5, 0), (0.5, 0, 0.05, 5 * math.cos(0.05), 5 * math.sin(0.05)))
        assert a.steer == pytest.approx(0.1, abs=1e-12)

    def test_waypoint_examples(self):
        assert infer_waypoint_action((0, 0, 0, 0, 0), (0, 0, 0, 0, 0)) == (0, 0, 0)
        assert infer_waypoint_action((0, 0, 0, 0, 0), (1, 0, 0.1, 0, 0)) == WaypointAction(1, 0, 0.1)
        w = infer_waypoint_action((0, 0, math.pi / 2, 0, 0), (0, 1, math.pi / 2, 0, 0))
        np.testing.assert_allclose(w, (1, 0, 0), atol=1e-12)

    def test_random_round_trip(self, rng):
        n = 10_000
        yaw = rng.uniform(-math.pi, math.pi, n)
        v = rng.uniform(0.5, 30, n)
        s = np.stack([rng.uniform(-100, 100, n), rng.uniform(-100, 100, n), yaw,
                      v * np.cos(yaw), v * np.sin(yaw)], axis=1)
        a = np.stack([rng.uniform(-4, 4, n), rng.uniform(-0.3, 0.3, n)], axis=1)
        back = infer_bicycle_action(s, step_bicycle(s, a))
        assert np.max(np.abs(back - a)) < 1e-9

    def test_expert_actions_shape(self):
        states = np.array([step_bicycle(np.array([0, 0, 0, 5, 0.0]), (0, 0))] * 3)
        assert expert_actions(states, "bicycle").shape == (2, 2)
        assert expert_actions(states, "waypoint").shape == (2, 3)
        with pytest.raises(ValueError):
            expert_actions(states, "teleport")

    def test_agent_state_speed(self):
        assert AgentState(0, 0, 0, 3, 4).speed == 5.0
