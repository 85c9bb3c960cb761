"""Phasic policy gradient and PPO baselines on small vectorized environments."""

__version__ = "0.1.0"
