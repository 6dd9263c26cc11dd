"""Scene encoder (masked self-attention with a fusion token) and output heads."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ParseError, ShapeMismatch, ValidationError, VersionMismatch
from . import autograd as ag
from .autograd import Tensor

# fixed per-column input scaling: x, y, w, h, yaw, id/speed, segment
TOKEN_SCALE = np.array([1 / 20.0, 1 / 20.0, 1 / 10.0, 1 / 5.0, 1.0, 1 / 10.0, 1.0])
IL_HIDDEN = 256
RL_HIDDEN = 64
ACTION_DIMS = {"il_bicycle": 2, "il_waypoint": 3}


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    token_dim: int = 7

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValidationError("model_dim must be divisible by heads")


class ParamStore:
    """Named float64 arrays, iterated in sorted-name order."""

    def __init__(self, arrays=None):
        self._arrays = {}
        for k, v in (arrays or {}).items():
            self._arrays[k] = np.array(v, dtype=np.float64)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        if name in self._arrays and self._arrays[name].shape != value.shape:
            raise ShapeMismatch(f"{name}: shape {value.shape} != {self._arrays[name].shape}")
        self._arrays[name] = value.copy()

    def __contains__(self, name):
        return name in self._arrays

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return sorted(self._arrays)

    def items(self):
        return [(k, self._arrays[k]) for k in self.names()]

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def tensors(self):
        """Fresh leaf tensors (requires_grad) for one forward/backward pass."""
        return {k: Tensor(v, requires_grad=True) for k, v in self._arrays.items()}

    def size(self):
        return int(sum(v.size for v in self._arrays.values()))

    def equal(self, other) -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self[k], other[k]) for k in self.names())


def _trunc_normal(rng, shape, std=0.02):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(bad.sum())
        bad = np.abs(out) > 2.0
    return out * std


def init_params(cfg: EncoderConfig = EncoderConfig(), seed: int = 0, heads=("il_bicycle", "il_waypoint", "rl")) -> ParamStore:
    """Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    d, ff = cfg.model_dim, cfg.ff_dim
    p = {}

    def linear(name, n_in, n_out):
        p[f"{name}.w"] = _trunc_normal(rng, (n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)

    def norm(name, n):
        p[f"{name}.g"] = np.ones(n)
        p[f"{name}.b"] = np.zeros(n)

    linear("enc.embed", cfg.token_dim, d)
    p["enc.fusion"] = _trunc_normal(rng, (1, d))
    for i in range(cfg.layers):
        pre = f"enc.l{i}"
        norm(f"{pre}.ln1", d)
        for k in ("q", "k", "v"):
            linear(f"{pre}.{k}", d, d)
        linear(f"{pre}.o", d, d)
        norm(f"{pre}.ln2", d)
        linear(f"{pre}.ff1", d, ff)
        linear(f"{pre}.ff2", ff, d)
    norm("enc.ln_out", d)
    for mode in heads:
        if mode in ACTION_DIMS:
            linear(f"{mode}.h", d, IL_HIDDEN)
            linear(f"{mode}.out", IL_HIDDEN, ACTION_DIMS[mode])
        elif mode == "rl":
            for head, n_out in (("pi", 4), ("vf", 1)):
                linear(f"rl.{head}.h1", d, RL_HIDDEN)
                linear(f"rl.{head}.h2", RL_HIDDEN, RL_HIDDEN)
                linear(f"rl.{head}.out", RL_HIDDEN, n_out)
        else:
            raise ValidationError(f"unknown head {mode!r}")
    return ParamStore(p)


def _lin(x, t, name):
    return x @ t[f"{name}.w"] + t[f"{name}.b"]


def encode(tokens, mask, params, cfg: EncoderConfig = EncoderConfig(), tensors=None):
    """Fusion-token latent for a batch of observations.

    ``tokens`` (B, R, 7), ``mask`` (B, R).  Padding rows are excluded from
    attention as keys; rows padded in every sample are dropped up front.
    Returns a (B, model_dim) :class:`Tensor`.
    """
    tokens = np.asarray(tokens, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if tokens.ndim == 2:
        tokens, mask = tokens[None], mask[None]
    if tokens.ndim != 3 or tokens.shape[-1] != cfg.token_dim or mask.shape != tokens.shape[:2]:
        raise ShapeMismatch(f"tokens {tokens.shape} / mask {mask.shape} do not match token_dim {cfg.token_dim}")
    t = tensors if tensors is not None else {k: Tensor(v) for k, v in params.items()}
    keep = mask.any(axis=0)
    tokens, mask = tokens[:, keep], mask[:, keep]
    b, r = mask.shape
    d, h = cfg.model_dim, cfg.heads
    dh = d // h
    x = _lin(Tensor(tokens * TOKEN_SCALE), t, "enc.embed")
    fusion = ag.broadcast_to(t["enc.fusion"].reshape(1, 1, d), (b, 1, d))
    x = ag.concat([fusion, x], axis=1)
    n = r + 1
    key_mask = np.concatenate([np.ones((b, 1), dtype=bool), mask], axis=1)[:, None, None, :]
    scale = 1.0 / np.sqrt(dh)
    for i in range(cfg.layers):
        pre = f"enc.l{i}"
        y = ag.layer_norm(x, t[f"{pre}.ln1.g"], t[f"{pre}.ln1.b"])

        def split(z):
            return z.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        q, k, v = (split(_lin(y, t, f"{pre}.{c}")) for c in ("q", "k", "v"))
        att = ag.masked_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, key_mask)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        x = x + _lin(ctx, t, f"{pre}.o")
        y = ag.layer_norm(x, t[f"{pre}.ln2.g"], t[f"{pre}.ln2.b"])
        x = x + _lin(ag.gelu(_lin(y, t, f"{pre}.ff1")), t, f"{pre}.ff2")
    x = ag.layer_norm(x, t["enc.ln_out.g"], t["enc.ln_out.b"])
    return x[:, 0, :]


@dataclass
class PolicyOutput:
    action: Tensor = None  # raw IL action (B, dims)
    alpha: Tensor = None
    beta: Tensor = None
    value: Tensor = None  # (B,)


def heads_forward(latent, params, mode: str, tensors=None) -> PolicyOutput:
    """Decode latents: IL modes give raw actions, ``rl`` gives Beta params + value."""
    t = tensors if tensors is not None else {k: Tensor(v) for k, v in params.items()}
    latent = ag.as_tensor(latent)
    if mode in ACTION_DIMS:
        hid = ag.gelu(_lin(latent, t, f"{mode}.h"))
        return PolicyOutput(action=_lin(hid, t, f"{mode}.out"))
    if mode == "rl":
        def mlp(head):
            z = ag.tanh(_lin(latent, t, f"rl.{head}.h1"))
            z = ag.tanh(_lin(z, t, f"rl.{head}.h2"))
            return _lin(z, t, f"rl.{head}.out")

        raw = mlp("pi")
        ab = ag.softplus(raw) + 1.0
        value = mlp("vf")
        return PolicyOutput(alpha=ab[:, 0:2], beta=ab[:, 2:4], value=value[:, 0])
    raise ValidationError(f"unknown head mode {mode!r}")


def forward(tokens, mask, params, mode, cfg: EncoderConfig = EncoderConfig(), tensors=None) -> PolicyOutput:
    return heads_forward(encode(tokens, mask, params, cfg, tensors), params, mode, tensors)


# -- checkpoints ----------------------------------------------------------

CKPT_MAGIC = "CHAUFFEUR-CKPT"
CKPT_VERSION = 1


def save_checkpoint(params: ParamStore, path, config: dict = None) -> None:
    """Text header line (JSON) then little-endian float64 payload in sorted-name order."""
    entries, offset, chunks = [], 0, []
    for name, arr in params.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {"format": CKPT_MAGIC, "version": CKPT_VERSION, "params": entries,
              "count": offset, "config": config or {}}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Returns ``(ParamStore, config_dict)``."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, ValueError):
        raise ParseError("unreadable checkpoint header", line=1) from None
    if header.get("format") != CKPT_MAGIC:
        raise ParseError("not a checkpoint", field="format", line=1)
    if header.get("version") != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {header.get('version')!r}")
    payload = np.frombuffer(data[nl + 1:], dtype="<f8")
    if payload.size != header["count"]:
        raise ParseError("checkpoint payload size mismatch")
    arrays = {}
    for e in header["params"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = payload[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return ParamStore(arrays), header.get("config", {})


def encoder_config_from(config: dict) -> EncoderConfig:
    enc = config.get("encoder") if config else None
    return EncoderConfig(**enc) if enc else EncoderConfig()


def encoder_config_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
