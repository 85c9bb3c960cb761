"""GAE advantages/value targets and running reward scaling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.999
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


def compute_gae(
    rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, cfg: GaeConfig = GaeConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets for ``[W, T]`` rollouts.

    ``values`` is ``[W, T+1]``; its last column is the bootstrap value of the state
    reached after the final step. ``dones[:, t]`` cuts bootstrapping from step ``t``
    into ``t+1`` (timeouts included).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if rewards.ndim != 2 or dones.shape != rewards.shape:
        raise ValueError(f"rewards {rewards.shape} and dones {dones.shape} must be equal [W, T] arrays")
    w, t_len = rewards.shape
    if values.shape != (w, t_len + 1):
        raise ValueError(f"values must have shape {(w, t_len + 1)}, got {values.shape}")
    notdone = 1.0 - dones.astype(float)
    deltas = rewards + cfg.gamma * notdone * values[:, 1:] - values[:, :-1]
    adv = np.zeros_like(rewards)
    running = np.zeros(w)
    for t in reversed(range(t_len)):
        running = deltas[:, t] + cfg.gamma * cfg.lam * notdone[:, t] * running
        adv[:, t] = running
    return adv, adv + values[:, :-1]


class RewardNormalizer:
    """Scales rewards so discounted returns have roughly unit variance.

    Tracks a per-instance discounted return ``R = gamma * R + r`` (reset after each
    episode end) and a running mean/variance of ``R`` merged batch by batch. Rewards
    are divided by ``max(std, eps)``; they are never re-centred.
    """

    def __init__(self, num_envs: int, gamma: float = 0.999, eps: float = 1e-8):
        self.gamma = float(gamma)
        self.eps = float(eps)
        self.returns = np.zeros(num_envs)
        self.mean = 0.0
        self.var = 1.0
        self.count = 1e-4

    @property
    def std(self) -> float:
        return max(float(np.sqrt(self.var)), self.eps)

    def _merge(self, batch: np.ndarray) -> None:
        b_mean, b_var, b_count = float(batch.mean()), float(batch.var()), batch.size
        delta = b_mean - self.mean
        total = self.count + b_count
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.mean += delta * b_count / total
        self.var = max(m2 / total, 0.0)
        self.count = total

    def update(self, rewards: np.ndarray, dones: np.ndarray) -> None:
        """Feed a ``[W, T]`` block of raw rewards and done flags."""
        rewards = np.asarray(rewards, dtype=float)
        dones = np.asarray(dones, dtype=bool)
        seen = np.empty_like(rewards)
        for t in range(rewards.shape[1]):
            self.returns = self.gamma * self.returns + rewards[:, t]
            seen[:, t] = self.returns
            self.returns[dones[:, t]] = 0.0
        self._merge(seen.ravel())

    def scale(self, rewards: np.ndarray) -> np.ndarray:
        return np.asarray(rewards, dtype=float) / self.std

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"returns": self.returns.copy(), "stats": np.array([self.mean, self.var, self.count])}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.returns = arrays["returns"].copy()
        self.mean, self.var, self.count = (float(x) for x in arrays["stats"])


def normalize_rewards(rewards: np.ndarray, dones: np.ndarray, normalizer: RewardNormalizer) -> np.ndarray:
    """Update the normalizer with a rollout block, then scale that block."""
    normalizer.update(rewards, dones)
    return normalizer.scale(rewards)


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def explained_variance(pred: np.ndarray, target: np.ndarray) -> float:
    var = float(np.var(target))
    if var == 0.0:
        return float("nan")
    return 1.0 - float(np.var(target - pred)) / var
