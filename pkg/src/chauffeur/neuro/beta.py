"""Beta policy distribution and the unit-interval <-> bicycle action map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..dynamics import ACC_RANGE, STEER_RANGE, BicycleAction
from ..errors import DomainError
from . import autograd as ag
from .autograd import Tensor

ACTION_LOW = np.array([ACC_RANGE[0], STEER_RANGE[0]])
ACTION_HIGH = np.array([ACC_RANGE[1], STEER_RANGE[1]])
SAMPLE_EPS = 1e-6


@dataclass
class BetaParams:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)


@dataclass
class BetaStats:
    mean: np.ndarray
    entropy: np.ndarray
    params: BetaParams

    def log_prob(self, x):
        return beta_log_prob(x, self.params.alpha, self.params.beta)


def beta_log_prob(x, alpha, beta):
    """Per-dimension log density; raises DomainError outside (0, 1)."""
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0.0) | (x >= 1.0)) or np.any(np.isnan(x)):
        raise DomainError("Beta log_prob needs x strictly inside (0, 1)")
    return (alpha - 1.0) * np.log(x) + (beta - 1.0) * np.log1p(-x) - special.betaln(alpha, beta)


def beta_entropy(alpha, beta):
    alpha, beta = np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    return (special.betaln(alpha, beta) - (alpha - 1.0) * special.digamma(alpha)
            - (beta - 1.0) * special.digamma(beta)
            + (alpha + beta - 2.0) * special.digamma(alpha + beta))


def beta_stats(p: BetaParams) -> BetaStats:
    mean = p.alpha / (p.alpha + p.beta)
    return BetaStats(mean=mean, entropy=beta_entropy(p.alpha, p.beta), params=p)


def sample_beta(rng: np.random.Generator, alpha, beta):
    """Draw from Beta(alpha, beta), clamped away from the open-interval edges."""
    u = rng.beta(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    return np.clip(u, SAMPLE_EPS, 1.0 - SAMPLE_EPS)


# -- differentiable versions -------------------------------------------------

def log_prob_t(x, alpha: Tensor, beta: Tensor) -> Tensor:
    """Summed-over-dims log density, differentiable in alpha/beta.  ``x`` is data."""
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0.0) | (x >= 1.0)):
        raise DomainError("Beta log_prob needs x strictly inside (0, 1)")
    lp = (alpha - 1.0) * np.log(x) + (beta - 1.0) * np.log1p(-x) - ag.betaln(alpha, beta)
    return lp.sum(axis=-1)


def entropy_t(alpha: Tensor, beta: Tensor) -> Tensor:
    """Summed-over-dims entropy."""
    h = (ag.betaln(alpha, beta) - (alpha - 1.0) * ag.digamma(alpha)
         - (beta - 1.0) * ag.digamma(beta) + (alpha + beta - 2.0) * ag.digamma(alpha + beta))
    return h.sum(axis=-1)


# -- action map ---------------------------------------------------------------

def map_action(u, low=ACTION_LOW, high=ACTION_HIGH):
    """Affine map from [0, 1]^2 to the (acc, steer) box."""
    u = np.asarray(u, dtype=float)
    out = low + u * (high - low)
    if out.ndim == 1:
        return BicycleAction(float(out[0]), float(out[1]))
    return out


def unmap_action(a, low=ACTION_LOW, high=ACTION_HIGH):
    a = np.asarray(a, dtype=float)
    return (a - low) / (high - low)
