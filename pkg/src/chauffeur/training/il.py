"""Imitation learning: expert-action datasets, the weighted l1 loss, and training."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import observation as obs_mod
from .. import simulator as sim_mod
from ..dynamics import expert_actions
from ..errors import EmptyDataset, ValidationError
from ..neuro import autograd as ag
from ..neuro.model import ACTION_DIMS, EncoderConfig, ParamStore, forward, init_params
from ..neuro.optim import AdamState, adam_step, gradients

MODE_TO_ACTION = {"il_bicycle": "bicycle", "il_waypoint": "waypoint"}
MODE_TO_TRANSITION = {"il_bicycle": "bicycle", "il_waypoint": "delta"}


@dataclass(frozen=True)
class ILConfig:
    lr: float = 1e-4
    epochs: int = 5
    scenarios_per_batch: int = 500
    batch_size: int = 6
    w_acc: float = 1.0
    w_steer: float = 5.0
    w_x: float = 1.0
    w_y: float = 50.0
    w_yaw: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if min(self.w_acc, self.w_steer, self.w_x, self.w_y, self.w_yaw) <= 0:
            raise ValidationError("loss weights must be positive")
        if self.lr < 0 or self.epochs < 0 or self.scenarios_per_batch < 1 or self.batch_size < 1:
            raise ValidationError("invalid IL optimisation settings")

    def weights(self, mode: str) -> np.ndarray:
        if mode == "il_bicycle":
            return np.array([self.w_acc, self.w_steer])
        if mode == "il_waypoint":
            return np.array([self.w_x, self.w_y, self.w_yaw])
        raise ValidationError(f"unknown IL mode {mode!r}")


def il_loss(pred, gt, cfg: ILConfig = ILConfig(), mode: str = "il_bicycle"):
    """Weighted l1 action error averaged over the batch.

    ``pred`` may be a Tensor (for training) or an array.  Returns
    ``(loss, components)`` where components are the per-term mean l1 errors.
    """
    w = cfg.weights(mode)
    gt = np.asarray(gt, dtype=float)
    p = ag.as_tensor(pred)
    if p.shape != gt.shape:
        raise ValidationError(f"prediction shape {p.shape} != target shape {gt.shape}")
    diff = p - gt
    sign = np.sign(diff.data)
    absdiff = diff * sign  # |x| with subgradient 0 at 0
    per_sample = (absdiff * w).sum(axis=-1)
    loss = per_sample.mean() if per_sample.ndim else per_sample
    comps = np.abs(diff.data).reshape(-1, len(w)).mean(axis=0)
    return (loss if isinstance(pred, ag.Tensor) else float(loss.data)), comps


# -- datasets -------------------------------------------------------------

@dataclass
class ILDataset:
    scenario: np.ndarray  # (N,) scenario index
    step: np.ndarray
    tokens: np.ndarray  # (N, R, 7)
    mask: np.ndarray  # (N, R)
    action: np.ndarray  # (N, d)
    mode: str

    def __len__(self):
        return len(self.step)

    @property
    def n_scenarios(self) -> int:
        return len(np.unique(self.scenario))


def expert_records(scenario, mode: str, tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig()):
    """Tokenized states along the expert replay with their GT actions."""
    acts = expert_actions(scenario.ego.states, MODE_TO_ACTION[mode], scenario.frequency_hz)
    cache = obs_mod.preprocess_static(scenario, tokenizer)
    cfg = sim_mod.SimConfig(transition=MODE_TO_TRANSITION[mode], terminate_on_arrival=False)
    sim = sim_mod.reset(scenario, config=cfg)
    out = []
    while not sim.done:
        out.append((sim.step, obs_mod.tokenize(sim, cache, tokenizer), acts[sim.step]))
        sim, _ = sim_mod.step(sim, acts[sim.step])
    return out


def build_dataset(scenarios, mode: str = "il_bicycle",
                  tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig()) -> ILDataset:
    if mode not in ACTION_DIMS:
        raise ValidationError(f"unknown IL mode {mode!r}")
    sc_idx, steps, toks, masks, acts = [], [], [], [], []
    for i, s in enumerate(scenarios):
        for t, o, a in expert_records(s, mode, tokenizer):
            sc_idx.append(i)
            steps.append(t)
            toks.append(o.tokens)
            masks.append(o.mask)
            acts.append(a)
    if not steps:
        raise EmptyDataset("no scenarios to build a dataset from")
    return ILDataset(np.array(sc_idx), np.array(steps), np.stack(toks), np.stack(masks),
                     np.stack(acts), mode)


def dump_observations(scenarios, path, mode: str = "il_bicycle",
                      tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig()) -> int:
    """Write expert observations and GT actions to a dump file.  Returns the record count."""
    dump = obs_mod.ObservationDump(path, tokenizer.rows, ACTION_DIMS[mode], mode, tokenizer)
    n = 0
    for i, s in enumerate(scenarios):
        recs = [(i, t, o, a) for t, o, a in expert_records(s, mode, tokenizer)]
        dump.extend(recs)
        n += len(recs)
    return n


def load_dataset(path) -> ILDataset:
    head, recs = obs_mod.read_dump(path)
    if len(recs) == 0:
        raise EmptyDataset(f"{path} holds no records")
    return ILDataset(recs["scenario"].astype(int), recs["step"].astype(int), np.array(recs["tokens"]),
                     np.array(recs["mask"], dtype=bool), np.array(recs["action"]), head["mode"])


# -- training -------------------------------------------------------------

@dataclass
class ILResult:
    params: ParamStore
    loss_curve: list  # one entry per update
    epoch_losses: list


def train_il(dataset: ILDataset, cfg: ILConfig = ILConfig(), mode: str = None,
             enc_cfg: EncoderConfig = EncoderConfig(), init: ParamStore = None) -> ILResult:
    """Adam on the weighted l1 loss.

    Each update consumes every record of ``scenarios_per_batch`` scenarios;
    gradients are accumulated over micro-batches of ``batch_size`` scenarios.
    """
    mode = mode or dataset.mode
    if dataset is None or len(dataset) == 0:
        raise EmptyDataset("empty IL dataset")
    params = init.copy() if init is not None else init_params(enc_cfg, cfg.seed, heads=(mode,))
    rng = np.random.default_rng(cfg.seed)
    scen_ids = np.unique(dataset.scenario)
    rows_of = {s: np.flatnonzero(dataset.scenario == s) for s in scen_ids}
    state = AdamState()
    curve, epoch_losses = [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(scen_ids)
        losses = []
        for b in range(math.ceil(len(order) / cfg.scenarios_per_batch)):
            chunk = order[b * cfg.scenarios_per_batch:(b + 1) * cfg.scenarios_per_batch]
            n_total = sum(len(rows_of[s]) for s in chunk)
            grads, loss_sum = None, 0.0
            for m in range(0, len(chunk), cfg.batch_size):
                rows = np.concatenate([rows_of[s] for s in chunk[m:m + cfg.batch_size]])
                t = params.tensors()
                out = forward(dataset.tokens[rows], dataset.mask[rows], params, mode, enc_cfg, t)
                loss, _ = il_loss(out.action, dataset.action[rows], cfg, mode)
                frac = len(rows) / n_total
                g = gradients(loss * frac, t)
                loss_sum += loss.item() * frac
                grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
            adam_step(params, grads, state, cfg.lr)
            curve.append(loss_sum)
            losses.append(loss_sum)
        epoch_losses.append(float(np.mean(losses)))
    return ILResult(params, curve, epoch_losses)


def predict(params, tokens, mask, mode, enc_cfg: EncoderConfig = EncoderConfig()) -> np.ndarray:
    return forward(tokens, mask, params, mode, enc_cfg).action.data


def il_policy(params, scenario, mode: str = "il_bicycle", enc_cfg: EncoderConfig = EncoderConfig(),
              tokenizer: obs_mod.TokenizerConfig = obs_mod.TokenizerConfig()):
    """Closed-loop policy ``sim -> action`` for :func:`simulator.run_episode`."""
    cache = obs_mod.preprocess_static(scenario, tokenizer)

    def policy(sim):
        o = obs_mod.tokenize(sim, cache, tokenizer)
        return predict(params, o.tokens[None], o.mask[None], mode, enc_cfg)[0]

    return policy


def evaluate_il(dataset: ILDataset, params, mode=None, cfg: ILConfig = ILConfig(),
                enc_cfg: EncoderConfig = EncoderConfig()):
    """Open-loop loss and per-term mean l1 on a dataset."""
    mode = mode or dataset.mode
    pred = predict(params, dataset.tokens, dataset.mask, mode, enc_cfg)
    return il_loss(pred, dataset.action, cfg, mode)
