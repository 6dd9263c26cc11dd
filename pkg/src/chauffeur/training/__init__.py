"""Imitation-learning and PPO trainers."""
from .il import ILConfig, ILDataset, build_dataset, dump_observations, il_loss, load_dataset, train_il
from .ppo import PPOConfig, RolloutBuffer, collect_rollouts, gae, ppo_loss, train_ppo

__all__ = ["ILConfig", "ILDataset", "build_dataset", "dump_observations", "il_loss", "load_dataset",
           "train_il", "PPOConfig", "RolloutBuffer", "collect_rollouts", "gae", "ppo_loss", "train_ppo"]
