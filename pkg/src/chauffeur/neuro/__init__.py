"""Small numpy autograd, the scene encoder, policy heads, and Adam."""
from .autograd import Tensor
from .beta import BetaParams, beta_stats, map_action, unmap_action
from .model import EncoderConfig, ParamStore, PolicyOutput, encode, forward, heads_forward, init_params
from .optim import AdamState, adam_step, gradients

__all__ = ["Tensor", "BetaParams", "beta_stats", "map_action", "unmap_action", "EncoderConfig",
           "ParamStore", "PolicyOutput", "encode", "forward", "heads_forward", "init_params",
           "AdamState", "adam_step", "gradients"]
