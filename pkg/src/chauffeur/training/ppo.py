"""PPO with GAE and a Beta policy over the bicycle action box."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .. import observation as obs_mod
from .. import simulator as sim_mod
from ..errors import ValidationError
from ..neuro import autograd as ag
from ..neuro.beta import beta_log_prob, entropy_t, log_prob_t, map_action, sample_beta
from ..neuro.model import EncoderConfig, ParamStore, forward, init_params
from ..neuro.optim import AdamState, adam_step, gradients

LOG_FIELDS = ["wave", "timesteps", "mean_reward", "episodes", "loss", "policy", "value", "entropy", "grad_norm"]


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    lam: float = 0.9
    clip: float = 0.2
    w_ent: float = 1.0
    w_value: float = 0.01
    batch_size: int = 2500
    epochs_per_wave: int = 1
    max_grad_norm: float = 0.5
    total_timesteps: int = 0
    rollout_scenarios: int = 8
    steps_per_wave: int = 320
    reward_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValidationError("lambda must lie in [0, 1]")
        if self.clip <= 0:
            raise ValidationError("clip must be positive")
        if self.total_timesteps < 0 or self.rollout_scenarios < 1 or self.steps_per_wave < 1:
            raise ValidationError("invalid rollout sizes")
        if self.batch_size < 1 or self.epochs_per_wave < 1:
            raise ValidationError("invalid minibatch settings")

    @property
    def wave_size(self) -> int:
        return self.rollout_scenarios * self.steps_per_wave


def gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Generalised advantage estimates and returns for one trajectory segment.

    ``dones[t]`` marks that the episode ended after step t, which cuts both
    the bootstrap and the advantage recursion.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not (len(r) == len(v) == len(d)):
        raise ValidationError("rewards, values and dones must have equal length")
    adv = np.zeros_like(r)
    nxt_v, nxt_a = float(bootstrap_value), 0.0
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * nxt_v * live - v[t]
        nxt_a = delta + gamma * lam * live * nxt_a
        adv[t] = nxt_a
        nxt_v = v[t]
    return adv, adv + v


def normalize(adv):
    adv = np.asarray(adv, dtype=float)
    sd = adv.std()
    return (adv - adv.mean()) / (sd + 1e-8)


def clipped_surrogate(ratio, adv, clip: float):
    """Per-sample ``min(rho A, clip(rho) A)``; works on arrays or Tensors."""
    if isinstance(ratio, ag.Tensor):
        return ag.minimum(ratio * adv, ag.clip(ratio, 1 - clip, 1 + clip) * adv)
    ratio = np.asarray(ratio, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)


def ppo_loss(new_log_prob, old_log_prob, advantages, values, returns, entropy, cfg: PPOConfig):
    """``policy + w_value * value + w_ent * entropy_term``.

    ``entropy_term`` is minus the mean entropy, so a positive weight rewards
    exploration.  Tensor inputs give a differentiable total.
    """
    ratio = ag.exp(ag.as_tensor(new_log_prob) - np.asarray(old_log_prob, dtype=float))
    surrogate = clipped_surrogate(ratio, np.asarray(advantages, dtype=float), cfg.clip)
    policy = -surrogate.mean()
    err = ag.as_tensor(values) - np.asarray(returns, dtype=float)
    value = (err * err).mean()
    ent = -ag.as_tensor(entropy).mean()
    total = policy + cfg.w_value * value + cfg.w_ent * ent
    parts = {"policy": policy.item(), "value": value.item(), "entropy": ent.item()}
    return total, parts


# -- rollouts -------------------------------------------------------------

@dataclass
class RolloutBuffer:
    tokens: np.ndarray
    mask: np.ndarray
    u: np.ndarray  # (N, 2) unit-interval actions
    log_prob: np.ndarray
    value: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    env: np.ndarray
    bootstrap: np.ndarray  # (K,) value after each env's last step (0 if done)
    episode_returns: list = field(default_factory=list)

    def __len__(self):
        return len(self.reward)

    def advantages(self, gamma, lam):
        adv = np.zeros(len(self))
        ret = np.zeros(len(self))
        for k in range(len(self.bootstrap)):
            rows = np.flatnonzero(self.env == k)
            a, r = gae(self.reward[rows], self.value[rows], self.done[rows], self.bootstrap[k], gamma, lam)
            adv[rows], ret[rows] = a, r
        return adv, ret


class _Env:
    def __init__(self, scenario, sim_cfg, tokenizer):
        self.scenario = scenario
        self.context = sim_mod.SceneContext(scenario)
        self.cache = obs_mod.preprocess_static(scenario, tokenizer)
        self.sim_cfg = sim_cfg
        self.tokenizer = tokenizer
        self.sim = None
        self.ret = 0.0
        self.reset()

    def reset(self):
        self.sim = sim_mod.reset(self.scenario, config=self.sim_cfg, context=self.context)
        self.ret = 0.0

    def observe(self):
        return obs_mod.tokenize(self.sim, self.cache, self.tokenizer)


def make_envs(scenarios, sim_cfg: sim_mod.SimConfig = None,
              tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig()):
    sim_cfg = sim_cfg or sim_mod.SimConfig()
    if not scenarios:
        raise ValidationError("no scenarios to roll out")
    return [_Env(s, sim_cfg, tokenizer) for s in scenarios]


def policy_eval(params, tokens, mask, enc_cfg):
    out = forward(tokens, mask, params, "rl", enc_cfg)
    return out.alpha.data, out.beta.data, out.value.data


def collect_rollouts(params: ParamStore, envs, steps_per_wave: int, rng: np.random.Generator,
                     enc_cfg: EncoderConfig = EncoderConfig(), reward_scale: float = 1.0) -> RolloutBuffer:
    """Step every env ``steps_per_wave`` times with Beta-sampled actions.

    All envs advance in lockstep through one batched forward per step.
    Records are laid out env-major so each env's steps are contiguous.
    """
    k = len(envs)
    per_env = [[] for _ in range(k)]
    returns = []
    for _ in range(steps_per_wave):
        obs = [e.observe() for e in envs]
        tokens, mask = obs_mod.stack(obs)
        alpha, beta, value = policy_eval(params, tokens, mask, enc_cfg)
        u = sample_beta(rng, alpha, beta)
        logp = beta_log_prob(u, alpha, beta).sum(axis=-1)
        for i, e in enumerate(envs):
            e.sim, rew = sim_mod.step(e.sim, map_action(u[i]))
            e.ret += rew.total
            done = e.sim.done
            per_env[i].append((tokens[i], mask[i], u[i], logp[i], value[i], rew.total * reward_scale,
                               done, alpha[i], beta[i]))
            if done:
                returns.append(e.ret)
                e.reset()
    live = [i for i, e in enumerate(envs) if not per_env[i][-1][6]]
    bootstrap = np.zeros(k)
    if live:
        tokens, mask = obs_mod.stack([envs[i].observe() for i in live])
        bootstrap[live] = policy_eval(params, tokens, mask, enc_cfg)[2]
    rows = [r for recs in per_env for r in recs]
    cols = list(zip(*rows))
    return RolloutBuffer(
        tokens=np.stack(cols[0]), mask=np.stack(cols[1]), u=np.stack(cols[2]),
        log_prob=np.array(cols[3]), value=np.array(cols[4]), reward=np.array(cols[5]),
        done=np.array(cols[6], dtype=bool), alpha=np.stack(cols[7]), beta=np.stack(cols[8]),
        env=np.repeat(np.arange(k), steps_per_wave), bootstrap=bootstrap, episode_returns=returns)


# -- training -------------------------------------------------------------

@dataclass
class PPOResult:
    params: ParamStore
    reward_curve: list  # mean finished-episode reward per wave
    log: list


def ppo_update(params, buf: RolloutBuffer, cfg: PPOConfig, state: AdamState, rng, enc_cfg):
    adv, ret = buf.advantages(cfg.gamma, cfg.lam)
    n = len(buf)
    mb = min(cfg.batch_size, n)
    stats = []
    for _ in range(cfg.epochs_per_wave):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            t = params.tensors()
            out = forward(buf.tokens[idx], buf.mask[idx], params, "rl", enc_cfg, t)
            new_lp = log_prob_t(buf.u[idx], out.alpha, out.beta)
            ent = entropy_t(out.alpha, out.beta)
            loss, parts = ppo_loss(new_lp, buf.log_prob[idx], normalize(adv[idx]), out.value,
                                   ret[idx], ent, cfg)
            grads = gradients(loss, t)
            norm = adam_step(params, grads, state, cfg.lr, max_grad_norm=cfg.max_grad_norm)
            stats.append([loss.item(), parts["policy"], parts["value"], parts["entropy"], norm])
    return np.mean(stats, axis=0)


def train_ppo(scenarios, cfg: PPOConfig = PPOConfig(), init: ParamStore = None,
              enc_cfg: EncoderConfig = EncoderConfig(), sim_cfg: sim_mod.SimConfig = None,
              tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig(), log_path=None,
              progress=None) -> PPOResult:
    """Alternate rollout waves over ``rollout_scenarios`` envs with PPO updates.

    Envs cycle through ``scenarios`` (env i plays scenario i mod len).  The
    number of waves is ``total_timesteps // wave_size``.
    """
    if not scenarios:
        raise ValidationError("no scenarios to train on")
    if init is not None:
        params = init.copy()
        if "rl.pi.out.w" not in params:
            fresh = init_params(enc_cfg, cfg.seed, heads=("rl",))
            for name, arr in fresh.items():
                if name.startswith("rl."):
                    params[name] = arr
    else:
        params = init_params(enc_cfg, cfg.seed, heads=("rl",))
    rng = np.random.default_rng(cfg.seed)
    picked = [scenarios[i % len(scenarios)] for i in range(cfg.rollout_scenarios)]
    envs = make_envs(picked, sim_cfg, tokenizer)
    state = AdamState()
    waves = cfg.total_timesteps // cfg.wave_size
    curve, log = [], []
    fh = open(log_path, "w", newline="", encoding="utf-8") if log_path else None
    try:
        writer = csv.writer(fh, lineterminator="\n") if fh else None
        if writer:
            writer.writerow(LOG_FIELDS)
        for w in range(waves):
            buf = collect_rollouts(params, envs, cfg.steps_per_wave, rng, enc_cfg, cfg.reward_scale)
            stats = ppo_update(params, buf, cfg, state, rng, enc_cfg)
            mean_r = float(np.mean(buf.episode_returns)) if buf.episode_returns else float("nan")
            curve.append(mean_r)
            row = [w, (w + 1) * cfg.wave_size, mean_r, len(buf.episode_returns)] + [float(x) for x in stats]
            log.append(dict(zip(LOG_FIELDS, row)))
            if writer:
                writer.writerow([_fmt(x) for x in row])
                fh.flush()
            if progress:
                progress(log[-1])
    finally:
        if fh:
            fh.close()
    return PPOResult(params, curve, log)


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


# -- deterministic evaluation -------------------------------------------------

def rl_policy(params, scenario, enc_cfg: EncoderConfig = EncoderConfig(),
              tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig()):
    """Closed-loop policy acting at the Beta mean."""
    cache = obs_mod.preprocess_static(scenario, tokenizer)

    def policy(sim):
        o = obs_mod.tokenize(sim, cache, tokenizer)
        a, b, _ = policy_eval(params, o.tokens[None], o.mask[None], enc_cfg)
        return np.asarray(map_action((a / (a + b))[0]))

    return policy


def mean_or_nan(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")
