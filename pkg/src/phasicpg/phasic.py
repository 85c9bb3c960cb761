"""Phasic policy gradient trainer and its PPO baselines.

Training alternates a policy phase (``n_pi`` PPO-style iterations on disjoint policy
and value networks, each followed by storing states and value targets in a replay
buffer) with an auxiliary phase that distills value targets into the policy
network's auxiliary head while a KL term anchors the policy to a frozen snapshot.

All objectives are minimized: the clipped surrogate and the entropy bonus enter with
a minus sign.

Variants
--------
``ppg-dual``          default: separate policy (logits + aux head) and value nets.
``ppg-single-net``    one torso with logits, aux and true value heads; the value head
                      is detached from the torso in the policy phase only.
``ppg-kl-penalty``    fixed-weight KL penalty replaces the clipped surrogate.
``ppg-no-aux-value``  no value-net training in the auxiliary phase; the policy phase
                      runs ``no_aux_value_e_v`` value epochs instead of ``e_v``.
``ppo-shared``        one network, combined loss, ``ppo_epochs`` epochs, no aux phase.
``ppo-separate``      separate networks, ``ppo_epochs`` epochs each, no aux phase.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .advantage import GaeConfig, RewardNormalizer, explained_variance, normalize_advantages
from .envs import VecEnv
from .losses import joint_grad, policy_loss_grad, value_grad
from .nn import (
    AdamState,
    ConfigurationError,
    Network,
    adam_step,
    entropy,
    kl_divergence,
    load_checkpoint,
    policy_network,
    save_checkpoint,
    value_network,
)
from .rollout import ReplayBuffer, RolloutBatch, RolloutWorker, minibatches

VARIANTS = (
    "ppg-dual",
    "ppg-single-net",
    "ppg-kl-penalty",
    "ppg-no-aux-value",
    "ppo-shared",
    "ppo-separate",
)
SHARED_NET_VARIANTS = {"ppg-single-net", "ppo-shared"}
ADV_NORM_MODES = ("batch", "minibatch", "none")


@dataclass
class Hyperparameters:
    variant: str = "ppg-dual"
    # phasic schedule
    n_pi: int = 32
    e_pi: int = 1
    e_v: int = 1
    e_aux: int = 6
    beta_clone: float = 1.0
    aux_minibatches_per_n_pi: int = 16
    # shared PPO settings
    gamma: float = 0.999
    lam: float = 0.95
    n_steps: int = 256
    minibatches: int = 8
    ent_coef: float = 0.01
    clip_eps: float = 0.2
    reward_norm: bool = True
    adv_norm: str = "batch"
    lr: float = 5e-4
    num_envs: int = 256
    total_timesteps: int = 2_000_000
    # variant-specific
    beta_pi: float = 1.0
    vf_coef: float = 0.5
    ppo_epochs: int = 3
    no_aux_value_e_v: int = 2
    # network
    hidden: tuple[int, ...] = (64, 64)
    dtype: str = "float64"
    max_grad_norm: float = 0.0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant: unknown {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.n_pi < 1:
            raise ConfigurationError("n_pi: must be >= 1")
        for name in ("e_pi", "e_v", "e_aux", "ppo_epochs", "no_aux_value_e_v"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name}: must be >= 0")
        for name in ("n_steps", "num_envs", "minibatches", "aux_minibatches_per_n_pi", "total_timesteps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name}: must be >= 1")
        batch = self.n_steps * self.num_envs
        if batch % self.minibatches:
            raise ConfigurationError(f"minibatches: {self.minibatches} does not divide batch size {batch}")
        if batch % self.aux_minibatches_per_n_pi:
            raise ConfigurationError(
                f"aux_minibatches_per_n_pi: {self.aux_minibatches_per_n_pi} does not divide batch size {batch}"
            )
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigurationError("clip_eps: must lie in (0, 1)")
        if self.adv_norm not in ADV_NORM_MODES:
            raise ConfigurationError(f"adv_norm: choose from {', '.join(ADV_NORM_MODES)}")
        if self.beta_pi < 0 or self.beta_clone < 0:
            raise ConfigurationError("beta_pi and beta_clone must be >= 0")
        if self.lr < 0:
            raise ConfigurationError("lr: must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigurationError("hidden: need at least one positive layer width")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError("dtype: choose float64 or float32")
        GaeConfig(self.gamma, self.lam)

    @property
    def is_ppg(self) -> bool:
        return self.variant.startswith("ppg")

    @property
    def batch_size(self) -> int:
        return self.n_steps * self.num_envs


METRICS_SCHEMA_VERSION = 1


@dataclass
class MetricsRow:
    """One row of metrics.csv, written after every policy iteration.

    Auxiliary-phase columns are filled only on the iteration that closes a phase.
    Empty cells mean "not applicable".
    """

    iteration: int
    phase: int
    env_steps: int
    episodes: int
    episode_return_mean: float | None
    policy_loss: float
    value_loss: float | None
    entropy: float
    approx_kl: float
    clip_frac: float
    explained_variance: float
    aux_loss: float | None = None
    clone_kl: float | None = None
    aux_value_loss: float | None = None


METRIC_COLUMNS = [f.name for f in fields(MetricsRow)]
_INT_COLUMNS = {"iteration", "phase", "env_steps", "episodes"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def format_metrics_header() -> str:
    return f"#metrics-schema={METRICS_SCHEMA_VERSION}\n" + ",".join(METRIC_COLUMNS) + "\n"


def format_metrics_row(row: MetricsRow) -> str:
    return ",".join(_fmt(getattr(row, c)) for c in METRIC_COLUMNS) + "\n"


def read_metrics(path: str | Path) -> list[MetricsRow]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if len(lines) < 2:
        raise ValueError(f"{path}: no metric rows")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    if reader.fieldnames != METRIC_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
    rows = []
    for rec in reader:
        kwargs = {}
        for key, raw in rec.items():
            if raw == "":
                kwargs[key] = None
            elif key in _INT_COLUMNS:
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        rows.append(MetricsRow(**kwargs))
    return rows


class TrainingAborted(RuntimeError):
    pass


GradProbe = Callable[[str, Network], None]


def _mean(xs: list[float]) -> float:
    return float(np.mean(xs)) if xs else float("nan")


@dataclass
class AuxStats:
    first_clone_kl: float | None = None
    targets_checksum_before: str = ""
    targets_checksum_after: str = ""
    joint: list[float] = field(default_factory=list)
    aux: list[float] = field(default_factory=list)
    clone_kl: list[float] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    updates: int = 0


class PhasicTrainer:
    """Owns networks, optimizers, the env worker, reward normalizer and replay buffer.

    ``grad_probe``, when set, is called as ``probe(tag, network)`` after every
    backward pass and before the optimizer step. Tags: ``policy``, ``value``,
    ``ppo``, ``aux-joint``, ``aux-value``.
    """

    def __init__(
        self,
        hp: Hyperparameters,
        env: VecEnv,
        seed: int = 0,
        checkpoint_dir: str | Path | None = None,
    ):
        hp.validate()
        if env.num_envs != hp.num_envs:
            raise ConfigurationError(f"env has {env.num_envs} instances but num_envs={hp.num_envs}")
        self.hp = hp
        self.env = env
        self.seed = int(seed)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        init_ss, act_ss, mb_ss = np.random.SeedSequence(self.seed).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        spec = env.spec
        self.shared = hp.variant in SHARED_NET_VARIANTS
        if self.shared:
            self.policy = policy_network(
                spec.obs_dim, spec.n_actions, hp.hidden, init_rng,
                aux_head=hp.is_ppg, value_head=True, dtype=hp.dtype,
            )
            self.value: Network | None = None
        else:
            self.policy = policy_network(
                spec.obs_dim, spec.n_actions, hp.hidden, init_rng, aux_head=hp.is_ppg, dtype=hp.dtype
            )
            self.value = value_network(spec.obs_dim, hp.hidden, init_rng, dtype=hp.dtype)
        self.opt_policy = AdamState()
        self.opt_value = AdamState() if self.value is not None else None
        self.worker = RolloutWorker(env, np.random.default_rng(act_ss))
        self.mb_rng = np.random.default_rng(mb_ss)
        self.gae = GaeConfig(hp.gamma, hp.lam)
        self.normalizer = RewardNormalizer(hp.num_envs, hp.gamma) if hp.reward_norm else None
        self.buffer = ReplayBuffer()
        self.grad_probe: GradProbe | None = None
        self.iteration = 0
        self.phase = 0
        self.env_steps = 0
        self.last_aux: AuxStats | None = None

    # -- acting ----------------------------------------------------------------

    def act(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out, _ = self.policy.forward(obs)
        if self.value is None:
            return out["logits"], out["value"]
        vout, _ = self.value.forward(obs)
        return out["logits"], vout["value"]

    def policy_logits(self, obs: np.ndarray) -> np.ndarray:
        return self.policy.forward(obs)[0]["logits"]

    # -- single optimization steps ---------------------------------------------

    def _probe(self, tag: str, net: Network) -> None:
        if self.grad_probe is not None:
            self.grad_probe(tag, net)

    def _step(self, net: Network, opt: AdamState) -> None:
        adam_step(net.params, opt, self.hp.lr, self.hp.max_grad_norm or None)

    def _policy_grads(self, out, actions, logp_old, adv, logits_old):
        hp = self.hp
        if hp.adv_norm == "minibatch":
            adv = normalize_advantages(adv)
        kl_variant = hp.variant == "ppg-kl-penalty"
        return policy_loss_grad(
            out["logits"], actions, logp_old, adv, hp.ent_coef, hp.clip_eps,
            logits_old=logits_old if kl_variant else None,
            beta_pi=hp.beta_pi if kl_variant else None,
        )

    def _policy_update(self, mb: dict) -> dict:
        out, cache = self.policy.forward(mb["obs"])
        stats, d_logits = self._policy_grads(out, mb["actions"], mb["logp_old"], mb["adv"], mb["logits_old"])
        self.policy.params.zero_grad()
        self.policy.backward(cache, {"logits": d_logits})
        self._probe("policy", self.policy)
        self._step(self.policy, self.opt_policy)
        return stats

    def _value_update(self, obs: np.ndarray, targets: np.ndarray, tag: str = "value") -> float:
        if self.value is not None:
            net, opt, detach = self.value, self.opt_value, ()
        else:
            # single network, policy phase: stop the value gradient at the torso
            net, opt, detach = self.policy, self.opt_policy, ("value",)
        out, cache = net.forward(obs, detach=detach)
        loss, d_v = value_grad(out["value"], targets)
        net.params.zero_grad()
        net.backward(cache, {"value": d_v})
        self._probe(tag, net)
        self._step(net, opt)
        return loss

    def _ppo_shared_update(self, mb: dict) -> tuple[dict, float]:
        out, cache = self.policy.forward(mb["obs"])
        stats, d_logits = self._policy_grads(out, mb["actions"], mb["logp_old"], mb["adv"], mb["logits_old"])
        v_loss, d_v = value_grad(out["value"], mb["targets"])
        self.policy.params.zero_grad()
        self.policy.backward(cache, {"logits": d_logits, "value": self.hp.vf_coef * d_v})
        self._probe("ppo", self.policy)
        self._step(self.policy, self.opt_policy)
        return stats, v_loss

    # -- phases ----------------------------------------------------------------

    def collect(self) -> RolloutBatch:
        batch = self.worker.collect(self.act, self.hp.n_steps, self.normalizer, self.gae)
        self.env_steps += len(batch)
        return batch

    def policy_iteration(self) -> MetricsRow:
        """Collect one rollout, run the policy/value epochs, and buffer the data."""
        hp = self.hp
        batch = self.collect()
        data = {
            "obs": batch.flat("obs"),
            "actions": batch.flat("actions"),
            "logp_old": batch.flat("logp_old"),
            "logits_old": batch.flat("logits_old"),
            "adv": batch.flat("advantages"),
            "targets": batch.flat("targets"),
        }
        if hp.adv_norm == "batch":
            data["adv"] = normalize_advantages(data["adv"])
        n = len(data["actions"])
        pol_stats: list[dict] = []
        v_losses: list[float] = []

        def parts():
            for idx in minibatches(n, hp.minibatches, self.mb_rng):
                yield {k: v[idx] for k, v in data.items()}

        if hp.variant == "ppo-shared":
            for _ in range(hp.ppo_epochs):
                for mb in parts():
                    stats, v_loss = self._ppo_shared_update(mb)
                    pol_stats.append(stats)
                    v_losses.append(v_loss)
        elif hp.variant == "ppo-separate":
            for _ in range(hp.ppo_epochs):
                for mb in parts():
                    pol_stats.append(self._policy_update(mb))
                    v_losses.append(self._value_update(mb["obs"], mb["targets"]))
        else:
            for _ in range(hp.e_pi):
                for mb in parts():
                    pol_stats.append(self._policy_update(mb))
            e_v = hp.no_aux_value_e_v if hp.variant == "ppg-no-aux-value" else hp.e_v
            for _ in range(e_v):
                for mb in parts():
                    v_losses.append(self._value_update(mb["obs"], mb["targets"]))
            self.buffer.add(batch)

        new_logits = np.concatenate(
            [self.policy_logits(data["obs"][i : i + 8192]) for i in range(0, n, 8192)]
        )
        self.iteration += 1
        returns = batch.episode_returns
        return MetricsRow(
            iteration=self.iteration,
            phase=self.phase,
            env_steps=self.env_steps,
            episodes=len(returns),
            episode_return_mean=float(np.mean(returns)) if returns else None,
            policy_loss=_mean([s["policy_loss"] for s in pol_stats]),
            value_loss=_mean(v_losses) if v_losses else None,
            entropy=_mean([s["entropy"] for s in pol_stats]) if pol_stats else float(np.mean(entropy(new_logits))),
            approx_kl=float(np.mean(kl_divergence(data["logits_old"], new_logits))),
            clip_frac=_mean([s["clip_frac"] for s in pol_stats]) if pol_stats else 0.0,
            explained_variance=explained_variance(batch.flat("values"), data["targets"]),
        )

    def policy_phase(self) -> list[MetricsRow]:
        """``n_pi`` policy iterations starting from an empty buffer."""
        self.buffer.clear()
        return [self.policy_iteration() for _ in range(self.hp.n_pi)]

    def auxiliary_phase(self) -> AuxStats:
        """Distill buffered value targets into the policy network (and train the value net)."""
        hp = self.hp
        if not self.buffer.n_rollouts:
            raise RuntimeError("auxiliary phase called with an empty buffer")
        self.buffer.freeze(self.policy_logits)
        stats = AuxStats(targets_checksum_before=self.buffer.targets_checksum())
        buf = self.buffer
        k = hp.aux_minibatches_per_n_pi * buf.n_rollouts
        train_value = hp.variant != "ppg-no-aux-value"
        for _ in range(hp.e_aux):
            for idx in buf.iter_minibatches(k, self.mb_rng):
                obs, targ, frozen = buf.obs[idx], buf.targets[idx], buf.frozen_logits[idx]
                out, cache = self.policy.forward(obs)
                joint, aux, kl, d_aux, d_logits = joint_grad(
                    out["aux_value"], targ, frozen, out["logits"], hp.beta_clone
                )
                if stats.first_clone_kl is None:
                    stats.first_clone_kl = kl
                grads = {"logits": d_logits, "aux_value": d_aux}
                if self.shared and train_value:
                    # single network: full value gradient into the shared torso
                    v_loss, d_v = value_grad(out["value"], targ)
                    grads["value"] = d_v
                    stats.value.append(v_loss)
                self.policy.params.zero_grad()
                self.policy.backward(cache, grads)
                self._probe("aux-joint", self.policy)
                self._step(self.policy, self.opt_policy)
                if self.value is not None and train_value:
                    stats.value.append(self._value_update(obs, targ, tag="aux-value"))
                stats.joint.append(joint)
                stats.aux.append(aux)
                stats.clone_kl.append(kl)
                stats.updates += 1
        stats.targets_checksum_after = buf.targets_checksum()
        self.buffer.clear()
        self.last_aux = stats
        return stats

    # -- outer loop -------------------------------------------------------------

    def networks(self) -> dict:
        nets = {"policy": self.policy.params}
        if self.value is not None:
            nets["value"] = self.value.params
        return nets

    def optimizers(self) -> dict:
        opts = {"policy": self.opt_policy}
        if self.opt_value is not None:
            opts["value"] = self.opt_value
        return opts

    def save(self, path: str | Path) -> None:
        extra = self.normalizer.state_arrays() if self.normalizer else {}
        meta = {"iteration": self.iteration, "phase": self.phase, "variant": self.hp.variant, "seed": self.seed}
        save_checkpoint(path, self.networks(), self.optimizers(), self.env_steps, extra, meta)

    def load(self, path: str | Path) -> dict:
        header, extra = load_checkpoint(path, self.networks(), self.optimizers())
        if self.normalizer is not None and extra:
            self.normalizer.load_state_arrays(extra)
        return header

    def train(
        self,
        total_timesteps: int | None = None,
        on_row: Callable[[MetricsRow], None] | None = None,
        checkpoint_every: int = 0,
    ) -> list[MetricsRow]:
        """Run policy iterations until the step budget is met.

        An auxiliary phase follows every ``n_pi`` iterations for PPG variants.
        ``checkpoint_every`` (in phases, 0 disables) controls periodic checkpoints.
        """
        hp = self.hp
        total = hp.total_timesteps if total_timesteps is None else total_timesteps
        n_iters = math.ceil(total / hp.batch_size)
        rows = []
        for _ in range(n_iters):
            try:
                row = self.policy_iteration()
                if self.iteration % hp.n_pi == 0:
                    if hp.is_ppg:
                        aux = self.auxiliary_phase()
                        row.aux_loss = _mean(aux.aux)
                        row.clone_kl = _mean(aux.clone_kl)
                        row.aux_value_loss = _mean(aux.value) if aux.value else None
                    self.phase += 1
                    if checkpoint_every and self.checkpoint_dir and self.phase % checkpoint_every == 0:
                        self.save(self.checkpoint_dir / f"phase_{self.phase:04d}.npz")
            except FloatingPointError as exc:
                if self.checkpoint_dir is not None:
                    self.save(self.checkpoint_dir / "abort.npz")
                raise TrainingAborted(f"iteration {self.iteration + 1}: {exc}") from exc
            rows.append(row)
            if on_row is not None:
                on_row(row)
        return rows


def final_return(rows: Iterable[MetricsRow], window: int = 10) -> float:
    """Episode-weighted mean return over the last ``window`` iterations."""
    rows = list(rows)[-window:]
    total = sum(r.episode_return_mean * r.episodes for r in rows if r.episode_return_mean is not None)
    count = sum(r.episodes for r in rows if r.episode_return_mean is not None)
    return total / count if count else float("nan")


def hyperparameters_dict(hp: Hyperparameters) -> dict:
    d = asdict(hp)
    d["hidden"] = list(hp.hidden)
    return d
