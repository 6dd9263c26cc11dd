import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chauffeur.errors import EmptyDataset, ValidationError
from chauffeur.generate import ScenarioFamilySpec, generate_scenario
from chauffeur.neuro.autograd import Tensor
from chauffeur.neuro.model import EncoderConfig, init_params
from chauffeur.observation import TokenizerConfig
from chauffeur.simulator import SimConfig
from chauffeur.training import (ILConfig, build_dataset, dump_observations, gae, il_loss, load_dataset,
                                ppo_loss, train_il, train_ppo)
from chauffeur.training.evaluate import PolicyFn, benchmark, run_episodes
from chauffeur.training.ppo import PPOConfig, clipped_surrogate, collect_rollouts, make_envs

SMALL = EncoderConfig(layers=1, heads=2, model_dim=8, ff_dim=16)
TOK = TokenizerConfig(n_rt=8, n_rd=16, n_nego=8)


@pytest.fixture(scope="module")
def scenes():
    return [generate_scenario(ScenarioFamilySpec("straight", 2, seed=s)) for s in (1, 2)]


@pytest.fixture(scope="module")
def dataset(scenes):
    return build_dataset(scenes, "il_bicycle", TOK)


class TestILLoss:
    def test_zero(self):
        gt = np.array([[1.0, 0.1]])
        loss, comps = il_loss(gt.copy(), gt)
        assert loss == 0.0 and list(comps) == [0.0, 0.0]

    def test_bicycle_weights(self):
        loss, comps = il_loss(np.array([[1.1, 0.02]]), np.zeros((1, 2)))
        assert loss == pytest.approx(1.2, abs=1e-12)
        np.testing.assert_allclose(comps, [1.1, 0.02])

    def test_bicycle_example(self):
        loss, _ = il_loss(np.array([[0.1, 0.02]]), np.zeros((1, 2)))
        assert loss == pytest.approx(1 * 0.1 + 5 * 0.02, abs=1e-12)

    def test_waypoint_example(self):
        loss, _ = il_loss(np.array([[0.1, 0.01, -0.01]]), np.zeros((1, 3)), mode="il_waypoint")
        assert loss == pytest.approx(1.1, abs=1e-12)

    def test_tensor_gradient(self):
        p = Tensor(np.array([[0.5, -0.2]]), requires_grad=True)
        loss, _ = il_loss(p, np.zeros((1, 2)))
        loss.backward()
        np.testing.assert_allclose(p.grad, [[1.0, -5.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            il_loss(np.zeros((1, 3)), np.zeros((1, 2)))

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
    def test_nonnegative(self, a, b):
        assert il_loss(np.array([a]), np.array([b]))[0] >= 0


class TestIL:
    def test_dataset(self, dataset, scenes):
        assert dataset.n_scenarios == 2
        assert dataset.tokens.shape[1:] == (TOK.rows, 7)
        assert len(dataset) == 2 * (scenes[0].horizon_steps - 1)

    def test_dump_round_trip(self, scenes, dataset, tmp_path):
        n = dump_observations(scenes, tmp_path / "d.obs", "il_bicycle", TOK)
        back = load_dataset(tmp_path / "d.obs")
        assert n == len(dataset)
        np.testing.assert_array_equal(back.tokens, dataset.tokens)
        np.testing.assert_array_equal(back.action, dataset.action)

    def test_lr_zero_unchanged(self, dataset):
        init = init_params(SMALL, 0, heads=("il_bicycle",))
        res = train_il(dataset, ILConfig(lr=0.0, epochs=1, scenarios_per_batch=1), enc_cfg=SMALL, init=init)
        assert res.params.equal(init)

    def test_curve_length(self, dataset):
        cfg = ILConfig(epochs=3, scenarios_per_batch=1, batch_size=1)
        res = train_il(dataset, cfg, enc_cfg=SMALL)
        assert len(res.loss_curve) == 3 * math.ceil(2 / 1)
        assert len(res.epoch_losses) == 3

    def test_deterministic(self, dataset):
        cfg = ILConfig(epochs=1, scenarios_per_batch=1)
        a = train_il(dataset, cfg, enc_cfg=SMALL)
        b = train_il(dataset, cfg, enc_cfg=SMALL)
        assert a.params.equal(b.params) and a.loss_curve == b.loss_curve

    def test_microbatching_matches_full_batch(self, dataset):
        cfg_a = ILConfig(epochs=1, scenarios_per_batch=2, batch_size=1)
        cfg_b = ILConfig(epochs=1, scenarios_per_batch=2, batch_size=2)
        a = train_il(dataset, cfg_a, enc_cfg=SMALL)
        b = train_il(dataset, cfg_b, enc_cfg=SMALL)
        for k, v in a.params.items():
            np.testing.assert_allclose(v, b.params[k], atol=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            build_dataset([], "il_bicycle")


class TestGae:
    def test_lambda_zero(self, rng):
        r, v = rng.normal(size=10), rng.normal(size=10)
        d = np.zeros(10)
        adv, ret = gae(r, v, d, 0.7, 0.9, 0.0)
        nxt = np.append(v[1:], 0.7)
        np.testing.assert_allclose(adv, r + 0.9 * nxt - v, atol=1e-14)
        np.testing.assert_allclose(ret, adv + v)

    def test_lambda_one_brute_force(self, rng):
        r, v = rng.normal(size=10), rng.normal(size=10)
        d = np.zeros(10)
        d[-1] = 1
        adv, _ = gae(r, v, d, 123.0, 0.97, 1.0)
        for t in range(10):
            want = sum(0.97 ** k * r[t + k] for k in range(10 - t)) - v[t]
            assert adv[t] == pytest.approx(want, abs=1e-10)

    def test_done_cuts(self):
        adv, _ = gae([1.0, 1.0], [0.0, 0.0], [1, 0], 5.0, 1.0, 1.0)
        assert adv[0] == 1.0 and adv[1] == 6.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            gae([1.0], [1.0, 2.0], [0], 0.0, 0.9, 0.9)


class TestPPOLoss:
    cfg = PPOConfig(w_ent=0.0, w_value=0.0)

    def test_unit_ratio(self, rng):
        adv = rng.normal(size=8)
        lp = rng.normal(size=8)
        _, parts = ppo_loss(lp, lp, adv, np.zeros(8), np.zeros(8), np.zeros(8), self.cfg)
        assert parts["policy"] == pytest.approx(-adv.mean(), abs=1e-14)

    def test_clip_rule(self):
        assert clipped_surrogate(np.array([1.5]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
        assert clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
    def test_zero_advantage(self, lps):
        lp = np.array(lps)
        _, parts = ppo_loss(lp, np.zeros_like(lp), np.zeros_like(lp), np.zeros_like(lp),
                            np.zeros_like(lp), np.zeros_like(lp), self.cfg)
        assert parts["policy"] == 0.0

    def test_weights(self):
        cfg = PPOConfig(w_ent=0.5, w_value=0.1)
        total, parts = ppo_loss(np.zeros(2), np.zeros(2), np.zeros(2), np.array([1.0, 3.0]), np.zeros(2),
                                np.array([2.0, 4.0]), cfg)
        assert parts["value"] == 5.0 and parts["entropy"] == -3.0
        assert total.item() == pytest.approx(0.1 * 5.0 - 0.5 * 3.0)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            PPOConfig(gamma=0)
        with pytest.raises(ValidationError):
            PPOConfig(lam=1.5)


class TestRollouts:
    def test_deterministic(self):
        s = generate_scenario(ScenarioFamilySpec("straight", 0, seed=7))
        p = init_params(SMALL, 0, heads=("rl",))
        bufs = []
        for _ in range(2):
            envs = make_envs([s, s], tokenizer=TOK)
            bufs.append(collect_rollouts(p, envs, 30, np.random.default_rng(5), SMALL))
        a, b = bufs
        for f in ("tokens", "mask", "u", "log_prob", "value", "reward", "done", "bootstrap"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
        assert len(a) == 60 and list(a.env[:30]) == [0] * 30

    def test_zero_timesteps_returns_init(self, scenes):
        init = init_params(SMALL, 4, heads=("rl",))
        res = train_ppo(scenes, PPOConfig(total_timesteps=0), init=init, enc_cfg=SMALL)
        assert res.params.equal(init) and res.reward_curve == []

    def test_short_run_logs(self, scenes, tmp_path):
        cfg = PPOConfig(total_timesteps=64, rollout_scenarios=2, steps_per_wave=16, batch_size=16)
        res = train_ppo(scenes, cfg, enc_cfg=SMALL, tokenizer=TOK, log_path=tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert len(res.log) == 2 and len(lines) == 3
        assert lines[0].startswith("wave,timesteps")

    def test_il_init_gets_rl_heads(self, scenes):
        init = init_params(SMALL, 0, heads=("il_bicycle",))
        res = train_ppo(scenes, PPOConfig(total_timesteps=0), init=init, enc_cfg=SMALL)
        assert "rl.pi.out.w" in res.params and "il_bicycle.out.w" in res.params


class TestEvaluate:
    def test_jobs_and_chunks_do_not_change_results(self, scenes):
        p = init_params(SMALL, 0, heads=("rl",))
        act = PolicyFn(p, "rl", SMALL)
        eps = scenes * 3
        base = run_episodes(eps, act, SimConfig(), TOK, chunk=4)
        par = run_episodes(eps, act, SimConfig(), TOK, chunk=4, jobs=2)
        one = [run_episodes([s], act, SimConfig(), TOK)[0] for s in eps]
        for a, b, c in zip(base, par, one):
            assert a.total_reward == b.total_reward == c.total_reward
            assert a.metrics == b.metrics == c.metrics
        assert benchmark(base).n_episodes == 6

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            PolicyFn(init_params(SMALL, 0), "teleport", SMALL)
