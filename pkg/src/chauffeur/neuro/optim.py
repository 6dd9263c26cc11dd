"""Adam with optional global-norm gradient clipping, and a gradient helper."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ParamStore


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm):
    """Scale grads so their joint l2 norm is at most ``max_norm``.  Returns (grads, pre-clip norm)."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params: ParamStore, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, max_grad_norm=None):
    """One bias-corrected Adam update in place.  Returns the pre-clip gradient norm."""
    grads, norm = clip_by_global_norm(grads, max_grad_norm)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name in params.names():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        if lr:
            params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return norm


def gradients(loss, tensors: dict) -> dict:
    """Backpropagate ``loss`` and collect grads for every leaf in ``tensors``.

    Leaves the loss does not reach get zero arrays.  Keys come back sorted.
    """
    loss.backward()
    return {k: (tensors[k].grad if tensors[k].grad is not None else np.zeros_like(tensors[k].data))
            for k in sorted(tensors)}
