"""Closed-loop evaluation of learned policies, batched across episodes."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import observation as obs_mod
from .. import simulator as sim_mod
from ..errors import ValidationError
from ..neuro.beta import map_action, sample_beta
from ..neuro.model import ACTION_DIMS, EncoderConfig, forward

# episodes advance together in fixed-size chunks so results never depend on --jobs
CHUNK = 32


def transition_for(mode: str) -> str:
    return "delta" if mode == "il_waypoint" else "bicycle"


class PolicyFn:
    """Batched ``(tokens, mask) -> (B, d)`` actions; picklable for worker processes.

    RL policies act at the Beta mean unless ``rng`` is given.
    """

    def __init__(self, params, mode: str, enc_cfg: EncoderConfig = EncoderConfig(), rng=None):
        if mode not in ACTION_DIMS and mode != "rl":
            raise ValidationError(f"unknown policy mode {mode!r}")
        self.params, self.mode, self.enc_cfg, self.rng = params, mode, enc_cfg, rng

    def __call__(self, tokens, mask):
        out = forward(tokens, mask, self.params, self.mode, self.enc_cfg)
        if self.mode in ACTION_DIMS:
            return out.action.data
        a, b = out.alpha.data, out.beta.data
        u = sample_beta(self.rng, a, b) if self.rng is not None else a / (a + b)
        return np.asarray(map_action(u))


make_act_fn = PolicyFn


@dataclass
class EpisodeResult:
    scenario_id: str
    total_reward: float
    metrics: sim_mod.EpisodeMetrics
    record: sim_mod.EpisodeRecord
    first_observation: obs_mod.Observation = None


def _run_chunk(scenarios, act_fn, sim_cfg, tokenizer, overrides, caches, contexts):
    sims = [sim_mod.reset(s, config=sim_cfg, init_override=ov, context=contexts[s.id])
            for s, ov in zip(scenarios, overrides)]
    totals = np.zeros(len(sims))
    first = [None] * len(sims)
    while True:
        live = [j for j, s in enumerate(sims) if not s.done]
        if not live:
            break
        obs = [obs_mod.tokenize(sims[j], caches[scenarios[j].id], tokenizer) for j in live]
        for j, o in zip(live, obs):
            if first[j] is None:
                first[j] = o
        tokens, mask = obs_mod.stack(obs)
        actions = act_fn(tokens, mask)
        for k, j in enumerate(live):
            sims[j], rew = sim_mod.step(sims[j], actions[k])
            totals[j] += rew.total
    return sims, totals, first


def _chunk_job(args):
    part, act_fn, sim_cfg, tokenizer, overrides = args
    caches = {s.id: obs_mod.preprocess_static(s, tokenizer) for s in part}
    contexts = {s.id: sim_mod.SceneContext(s) for s in part}
    sims, totals, first = _run_chunk(part, act_fn, sim_cfg, tokenizer, overrides, caches, contexts)
    out = []
    for s, sim, tot, fo in zip(part, sims, totals, first):
        rec = sim.record()
        out.append(EpisodeResult(s.id, float(tot), sim_mod.compute_metrics(rec), rec, fo))
    return out


def run_episodes(scenarios, act_fn, sim_cfg: sim_mod.SimConfig = None,
                 tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig(), init_overrides=None,
                 chunk: int = CHUNK, jobs: int = 1):
    """One closed-loop episode per entry of ``scenarios`` (repeats allowed).

    Episodes run in fixed chunks of ``chunk``; ``jobs > 1`` farms chunks out
    to worker processes without changing any result.
    """
    sim_cfg = sim_cfg or sim_mod.SimConfig()
    scenarios = list(scenarios)
    overrides = list(init_overrides) if init_overrides is not None else [None] * len(scenarios)
    tasks = [(scenarios[i:i + chunk], act_fn, sim_cfg, tokenizer, overrides[i:i + chunk])
             for i in range(0, len(scenarios), chunk)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_chunk_job, tasks))
    else:
        parts = [_chunk_job(t) for t in tasks]
    return [r for part in parts for r in part]


def benchmark(results) -> sim_mod.BenchmarkReport:
    return sim_mod.aggregate([r.metrics for r in results])
