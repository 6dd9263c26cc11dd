import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chauffeur.dynamics import infer_bicycle_action, step_bicycle
from chauffeur.errors import ParseError, ValidationError, VersionMismatch
from chauffeur.generate import FAMILIES, ScenarioFamilySpec, generate_family_set, generate_scenario
from chauffeur.geometry import obb_overlap_many, wrap_angle
from chauffeur.scenario import (dumps_scenario, load_scenario, load_scenario_dir, loads_scenario,
                                save_scenario)
from chauffeur.simulator import SceneContext, compute_flags, RewardConfig


@pytest.fixture(scope="module")
def curve():
    return generate_scenario(ScenarioFamilySpec("curve", 4, seed=1))


def test_empty_straight():
    s = generate_scenario(ScenarioFamilySpec("straight", 0, seed=7))
    assert len(s.agents) == 1
    d = np.diff(s.routing, axis=0)
    heading = np.arctan2(d[:, 1], d[:, 0])
    assert np.ptp(heading) < 1e-6


def test_deterministic():
    spec = ScenarioFamilySpec("intersection", 3, seed=5)
    assert dumps_scenario(generate_scenario(spec)) == dumps_scenario(generate_scenario(spec))


def test_expert_round_trip(curve):
    st_ = curve.ego.states
    for t in range(len(st_) - 1):
        a = infer_bicycle_action(st_[t], st_[t + 1])
        nxt = np.array(step_bicycle(st_[t], a))
        assert np.hypot(*(nxt[:2] - st_[t + 1, :2])) < 1e-6


def test_routing_is_ego_log(curve):
    from chauffeur.geometry import dedupe_points
    np.testing.assert_array_equal(curve.routing, dedupe_points(curve.ego.states[:, :2]))


@pytest.mark.parametrize("family", FAMILIES)
def test_family_invariants(family):
    for seed in range(3):
        s = generate_scenario(ScenarioFamilySpec(family, 3, seed=seed))
        assert s.horizon_steps == 80 and s.frequency_hz == 10
        assert 1 <= len(s.agents) <= 128
        for a in s.agents:
            assert a.states.shape == (80, 5)
            assert np.all(np.abs(wrap_angle(a.states[:, 2]) - a.states[:, 2]) < 1e-12)
        # the expert log is clean at every step
        ctx = SceneContext(s)
        states = np.stack([a.states for a in s.agents], axis=1)
        for t in range(80):
            f = compute_flags(ctx, states[t], RewardConfig())
            assert not (f.offroad or f.collision or f.wrongway)


def test_family_set_ids_unique():
    ss = generate_family_set("parking", 5, seed=2)
    assert len({s.id for s in ss}) == 5
    assert all(s.family == "parking" for s in ss)


def test_spec_validation():
    with pytest.raises(ValidationError):
        generate_scenario(ScenarioFamilySpec("highway"))
    with pytest.raises(ValidationError):
        generate_scenario(ScenarioFamilySpec("curve", curvature=-1))
    with pytest.raises(ValidationError):
        generate_scenario(ScenarioFamilySpec("curve", traffic_density=128))


class TestFormat:
    @settings(max_examples=10)
    @given(st.sampled_from(FAMILIES), st.integers(0, 4), st.integers(0, 1000))
    def test_round_trip(self, family, density, seed):
        s = generate_scenario(ScenarioFamilySpec(family, density, seed=seed))
        assert loads_scenario(dumps_scenario(s)) == s

    def test_file_round_trip(self, curve, tmp_path):
        save_scenario(curve, tmp_path / "a.scn.json")
        assert load_scenario(tmp_path / "a.scn.json") == curve
        assert load_scenario_dir(tmp_path) == [curve]

    def test_missing_routing(self, curve):
        raw = json.loads(dumps_scenario(curve))
        del raw["routing"]
        with pytest.raises(ParseError) as exc:
            loads_scenario(json.dumps(raw))
        assert exc.value.field == "routing"
        assert "routing" in str(exc.value)

    def test_zero_horizon(self, curve):
        raw = json.loads(dumps_scenario(curve))
        raw["horizon_steps"] = 0
        with pytest.raises(ValidationError):
            loads_scenario(json.dumps(raw))

    def test_version(self, curve):
        raw = json.loads(dumps_scenario(curve))
        raw["version"] = 99
        with pytest.raises(VersionMismatch):
            loads_scenario(json.dumps(raw))

    def test_bad_json(self):
        with pytest.raises(ParseError):
            loads_scenario("{not json")

    def test_wrong_state_count(self, curve):
        raw = json.loads(dumps_scenario(curve))
        raw["agents"][0]["states"] = raw["agents"][0]["states"][:-1]
        with pytest.raises(ValidationError):
            loads_scenario(json.dumps(raw))
