"""Seeded, vectorized toy environments with discrete actions.

Every instance owns its own ``numpy.random.Generator``; a fresh level seed is drawn
from it at every reset, so the level set is unbounded. Instances that finish an
episode are reset inside :meth:`VecEnv.step` and return the first observation of
the new episode.

Built-in environments
---------------------
``keydoor``
    ``size`` x ``size`` grid with a border wall. A wall line with a single locked
    door splits the interior in two; the agent and a key start on one side and the
    goal sits on the other. Picking up the key pays +0.5, reaching the goal pays +1
    and ends the episode. The door opens when the agent walks into it holding the
    key. Observation: one-hot interior grid with channels (wall, agent, key, closed
    door, goal), flattened, plus a has-key flag. Actions: up, down, left, right.
``chain``
    Positions ``0 .. length-1``; action 0 moves left, action 1 moves right and the
    remaining ``n_distractors`` actions do nothing. Reaching the last position pays
    +1 and ends the episode. Observation: one-hot position.
``bandit``
    One-step episodes with a constant observation. Action ``i`` pays 1 with
    probability ``probs[i]`` and 0 otherwise.

All observations lie in [0, 1]. Timeouts at ``max_steps`` end the episode with no
extra reward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEVEL_SEED_RANGE = (0, 2**31 - 1)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    n_actions: int
    max_episode_steps: int
    max_step_reward: float
    level_seed_range: tuple[int, int] = LEVEL_SEED_RANGE

    def __post_init__(self):
        if self.n_actions < 2:
            raise ValueError("action count must be at least 2")
        if self.max_episode_steps < 1:
            raise ValueError("max episode length must be at least 1")


class VecEnv:
    """Base class: W independent instances stepped in lockstep."""

    spec: EnvSpec

    def __init__(self, num_envs: int, seed: int):
        if num_envs < 1:
            raise ValueError("num_envs must be positive")
        self.num_envs = int(num_envs)
        self.seed = int(seed)
        seqs = np.random.SeedSequence(self.seed).spawn(self.num_envs)
        self.rngs = [np.random.default_rng(s) for s in seqs]
        self.t = np.zeros(self.num_envs, dtype=np.int64)
        self.level_seeds = np.zeros(self.num_envs, dtype=np.int64)
        self.obs: np.ndarray | None = None

    def _draw_level(self, i: int) -> np.random.Generator:
        lo, hi = self.spec.level_seed_range
        self.level_seeds[i] = self.rngs[i].integers(lo, hi)
        self.t[i] = 0
        return np.random.default_rng(int(self.level_seeds[i]))

    def _reset_instance(self, i: int) -> None:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Apply actions to every instance; returns (rewards, terminal flags)."""
        raise NotImplementedError

    def reset(self) -> np.ndarray:
        for i in range(self.num_envs):
            self._reset_instance(i)
        self.obs = self._observe()
        return self.obs

    def _check_actions(self, actions) -> np.ndarray:
        actions = np.asarray(actions)
        if actions.shape != (self.num_envs,):
            raise ValueError(f"expected {self.num_envs} actions, got shape {actions.shape}")
        bad = np.flatnonzero((actions < 0) | (actions >= self.spec.n_actions))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"invalid action {actions[i]!r} for env instance {i}")
        return actions.astype(np.int64)

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.obs is None:
            self.reset()
        actions = self._check_actions(actions)
        rewards, terminal = self._transition(actions)
        self.t += 1
        dones = terminal | (self.t >= self.spec.max_episode_steps)
        for i in np.flatnonzero(dones):
            self._reset_instance(int(i))
        self.obs = self._observe()
        return self.obs, rewards, dones


# up, down, left, right as (row, col) deltas
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]], dtype=np.int64)
N_CHANNELS = 5


class KeyDoor(VecEnv):
    def __init__(self, num_envs: int, seed: int, size: int = 9, max_steps: int = 100):
        if size < 6:
            raise ValueError("keydoor size must be at least 6")
        self.n = size - 2
        self.spec = EnvSpec("keydoor", N_CHANNELS * self.n * self.n + 1, 4, int(max_steps), 1.0)
        super().__init__(num_envs, seed)
        w, n = self.num_envs, self.n
        self.walls = np.zeros((w, n, n), dtype=bool)
        self.agent = np.zeros((w, 2), dtype=np.int64)
        self.key = np.zeros((w, 2), dtype=np.int64)
        self.door = np.zeros((w, 2), dtype=np.int64)
        self.goal = np.zeros((w, 2), dtype=np.int64)
        self.key_present = np.zeros(w, dtype=bool)
        self.door_open = np.zeros(w, dtype=bool)
        self.has_key = np.zeros(w, dtype=bool)

    def _reset_instance(self, i: int) -> None:
        rng = self._draw_level(i)
        n = self.n
        split = int(rng.integers(2, n - 2))
        door_at = int(rng.integers(0, n))
        cells_near = [(r, c) for r in range(n) for c in range(split)]
        cells_far = [(r, c) for r in range(n) for c in range(split + 1, n)]
        picks = rng.choice(len(cells_near), size=2, replace=False)
        agent, key = cells_near[picks[0]], cells_near[picks[1]]
        goal = cells_far[int(rng.integers(len(cells_far)))]
        walls = np.zeros((n, n), dtype=bool)
        walls[:, split] = True
        walls[door_at, split] = False
        door = (door_at, split)
        points = np.array([agent, key, door, goal])
        # random flips/transpose give four orientations of the split
        if rng.integers(2):
            walls = walls.T
            points = points[:, ::-1]
        if rng.integers(2):
            walls = walls[:, ::-1]
            points[:, 1] = n - 1 - points[:, 1]
        if rng.integers(2):
            walls = walls[::-1, :]
            points[:, 0] = n - 1 - points[:, 0]
        self.walls[i] = walls
        self.agent[i], self.key[i], self.door[i], self.goal[i] = points
        self.key_present[i] = True
        self.door_open[i] = False
        self.has_key[i] = False

    def _observe(self) -> np.ndarray:
        w, n = self.num_envs, self.n
        grid = np.zeros((w, N_CHANNELS, n, n))
        idx = np.arange(w)
        grid[:, 0] = self.walls
        grid[idx, 1, self.agent[:, 0], self.agent[:, 1]] = 1.0
        k = np.flatnonzero(self.key_present)
        grid[k, 2, self.key[k, 0], self.key[k, 1]] = 1.0
        d = np.flatnonzero(~self.door_open)
        grid[d, 3, self.door[d, 0], self.door[d, 1]] = 1.0
        grid[idx, 4, self.goal[:, 0], self.goal[:, 1]] = 1.0
        return np.concatenate([grid.reshape(w, -1), self.has_key[:, None].astype(float)], axis=1)

    def _transition(self, actions):
        w, n = self.num_envs, self.n
        idx = np.arange(w)
        target = self.agent + MOVES[actions]
        inside = np.all((target >= 0) & (target < n), axis=1)
        target = np.where(inside[:, None], target, self.agent)
        blocked = self.walls[idx, target[:, 0], target[:, 1]]
        at_door = np.all(target == self.door, axis=1) & ~self.door_open
        opens = at_door & self.has_key
        self.door_open |= opens
        blocked |= at_door & ~opens
        self.agent = np.where(blocked[:, None], self.agent, target)
        rewards = np.zeros(w)
        got_key = self.key_present & np.all(self.agent == self.key, axis=1)
        self.key_present &= ~got_key
        self.has_key |= got_key
        rewards[got_key] += 0.5
        at_goal = np.all(self.agent == self.goal, axis=1)
        rewards[at_goal] += 1.0
        return rewards, at_goal


class Chain(VecEnv):
    def __init__(self, num_envs: int, seed: int, length: int = 8, n_distractors: int = 2, max_steps: int = 32):
        if length < 2:
            raise ValueError("chain length must be at least 2")
        self.length = int(length)
        self.spec = EnvSpec("chain", self.length, 2 + int(n_distractors), int(max_steps), 1.0)
        super().__init__(num_envs, seed)
        self.pos = np.zeros(self.num_envs, dtype=np.int64)

    def _reset_instance(self, i):
        self._draw_level(i)
        self.pos[i] = 0

    def _observe(self):
        obs = np.zeros((self.num_envs, self.length))
        obs[np.arange(self.num_envs), self.pos] = 1.0
        return obs

    def _transition(self, actions):
        delta = np.where(actions == 0, -1, np.where(actions == 1, 1, 0))
        self.pos = np.clip(self.pos + delta, 0, self.length - 1)
        terminal = self.pos == self.length - 1
        return terminal.astype(float), terminal


class Bandit(VecEnv):
    def __init__(self, num_envs: int, seed: int, probs: tuple[float, ...] = (0.2, 0.8)):
        self.probs = np.asarray(probs, dtype=float)
        if np.any((self.probs < 0) | (self.probs > 1)):
            raise ValueError("bandit probabilities must lie in [0, 1]")
        self.spec = EnvSpec("bandit", 1, len(self.probs), 1, 1.0)
        super().__init__(num_envs, seed)

    def _reset_instance(self, i):
        self._draw_level(i)

    def _observe(self):
        return np.ones((self.num_envs, 1))

    def _transition(self, actions):
        u = np.array([rng.random() for rng in self.rngs])
        rewards = (u < self.probs[actions]).astype(float)
        return rewards, np.ones(self.num_envs, dtype=bool)


ENVS = {"keydoor": KeyDoor, "chain": Chain, "bandit": Bandit}


def make_env(name: str, num_envs: int, seed: int, **params) -> VecEnv:
    if name not in ENVS:
        raise ValueError(f"unknown env {name!r}; available: {', '.join(sorted(ENVS))}")
    return ENVS[name](num_envs, seed, **params)
