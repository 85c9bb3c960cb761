"""On-policy collection, minibatch partitions and the auxiliary-phase replay buffer."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .advantage import GaeConfig, RewardNormalizer, compute_gae, normalize_rewards
from .envs import VecEnv
from .nn import ConfigurationError, log_prob, softmax

# obs [B, obs_dim] -> (logits [B, A], values [B])
ActFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass
class RolloutBatch:
    """Arrays laid out ``[W, T, ...]``; ``values`` carries the bootstrap column."""

    obs: np.ndarray
    actions: np.ndarray
    raw_rewards: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    logp_old: np.ndarray
    logits_old: np.ndarray
    values: np.ndarray
    advantages: np.ndarray | None = None
    targets: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)

    @property
    def num_envs(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.actions.size

    def flat(self, name: str) -> np.ndarray:
        """A ``[W*T, ...]`` view of one field."""
        arr = getattr(self, name)
        if name == "values":
            arr = arr[:, :-1]
        return arr.reshape((-1,) + arr.shape[2:])

    def dump(self, path: str | Path) -> None:
        """Write every array to an ``.npz`` file (keys are the field names)."""
        arrays = {k: v for k, v in vars(self).items() if isinstance(v, np.ndarray)}
        arrays["episode_returns"] = np.asarray(self.episode_returns, dtype=float)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(softmax(logits), axis=1)
    u = rng.random(len(logits))[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), logits.shape[1] - 1)


class RolloutWorker:
    """Owns a VecEnv and per-instance episode accumulators across rollouts."""

    def __init__(self, env: VecEnv, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self.obs = env.reset()
        self.episode_return = np.zeros(env.num_envs)

    def collect(
        self,
        act: ActFn,
        horizon: int,
        normalizer: RewardNormalizer | None = None,
        gae: GaeConfig | None = None,
    ) -> RolloutBatch:
        """Run ``horizon`` steps in every instance under ``act``.

        Rewards are scaled by ``normalizer`` (updated with this block first) and,
        if ``gae`` is given, advantages and targets are filled in.
        """
        w = self.env.num_envs
        obs_l, act_l, rew_l, done_l, logp_l, logit_l, val_l = [], [], [], [], [], [], []
        finished: list[float] = []
        for t in range(horizon):
            logits, values = act(self.obs)
            actions = sample_actions(logits, self.rng)
            obs_l.append(self.obs)
            act_l.append(actions)
            logit_l.append(logits)
            logp_l.append(log_prob(logits, actions))
            val_l.append(values)
            try:
                self.obs, rewards, dones = self.env.step(actions)
            except Exception as exc:
                raise RuntimeError(f"env step {t} failed: {exc}") from exc
            self.episode_return += rewards
            for i in np.flatnonzero(dones):
                finished.append(float(self.episode_return[i]))
            self.episode_return[dones] = 0.0
            rew_l.append(rewards)
            done_l.append(dones)
        _, last_values = act(self.obs)
        val_l.append(last_values)

        def stack(items):
            return np.stack(items, axis=1)

        raw = stack(rew_l)
        dones = stack(done_l)
        rewards = raw if normalizer is None else normalize_rewards(raw, dones, normalizer)
        batch = RolloutBatch(
            obs=stack(obs_l),
            actions=stack(act_l),
            raw_rewards=raw,
            rewards=rewards,
            dones=dones,
            logp_old=stack(logp_l),
            logits_old=stack(logit_l),
            values=stack(val_l),
            episode_returns=finished,
        )
        if gae is not None:
            batch.advantages, batch.targets = compute_gae(batch.rewards, batch.values, batch.dones, gae)
        assert batch.actions.shape == (w, horizon)
        return batch


def minibatches(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle ``range(n)`` and split it into ``k`` equal index sets."""
    if k < 1 or n % k:
        raise ConfigurationError(f"{k} minibatches do not evenly divide a batch of {n}")
    perm = rng.permutation(n)
    return np.split(perm, k)


class ReplayBuffer:
    """States and value targets from one policy phase, plus frozen policy logits."""

    def __init__(self):
        self.clear()

    def clear(self) -> None:
        self._obs: list[np.ndarray] = []
        self._targets: list[np.ndarray] = []
        self.obs: np.ndarray | None = None
        self.targets: np.ndarray | None = None
        self.frozen_logits: np.ndarray | None = None
        self.n_rollouts = 0

    def __len__(self) -> int:
        return sum(len(t) for t in self._targets)

    def add(self, batch: RolloutBatch) -> None:
        if self.frozen_logits is not None:
            raise RuntimeError("buffer is frozen; clear it before adding")
        self._obs.append(batch.flat("obs").copy())
        self._targets.append(batch.flat("targets").copy())
        self.n_rollouts += 1

    def freeze(self, policy_logits: Callable[[np.ndarray], np.ndarray], chunk: int = 8192) -> None:
        """Store the current policy's full logits for every buffered state."""
        if not self._obs:
            raise RuntimeError("freeze called on an empty buffer")
        if self.frozen_logits is not None:
            raise RuntimeError("buffer already frozen for this phase")
        self.obs = np.concatenate(self._obs)
        self.targets = np.concatenate(self._targets)
        self.obs.flags.writeable = False
        self.targets.flags.writeable = False
        logits = [policy_logits(self.obs[i : i + chunk]) for i in range(0, len(self.obs), chunk)]
        self.frozen_logits = np.concatenate(logits)
        self.frozen_logits.flags.writeable = False

    @property
    def frozen(self) -> bool:
        return self.frozen_logits is not None

    def targets_checksum(self) -> str:
        targets = self.targets if self.targets is not None else np.concatenate(self._targets)
        return hashlib.sha256(np.ascontiguousarray(targets).tobytes()).hexdigest()

    def iter_minibatches(self, k: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
        if not self.frozen:
            raise RuntimeError("auxiliary phase requires a frozen buffer")
        yield from minibatches(len(self.targets), k, rng)
