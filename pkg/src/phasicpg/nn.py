"""Small numpy MLP stack with hand-written reverse mode, categorical helpers and Adam.

Only the graphs this package needs are supported: a tanh MLP torso feeding a set of
linear heads. Each head can be detached from the torso at backward time, which is how
the single-network variant stops value gradients at the last shared layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

CHECKPOINT_FORMAT = "phasicpg-checkpoint"
CHECKPOINT_VERSION = 1

DTYPES = {"float64": np.float64, "float32": np.float32}


class ConfigurationError(ValueError):
    """Raised for invalid shapes or settings detected at build or call time."""


class ParameterSet:
    """Named parameter tensors with same-shaped gradient slots.

    ``touched`` records which slots received a gradient since the last
    :meth:`zero_grad`; the optimizer only updates those.
    """

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.touched: set[str] = set()
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def size(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)
        self.touched.clear()

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad
        self.touched.add(name)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads.values()])

    def set_flat(self, vector: np.ndarray) -> None:
        offset = 0
        for p in self.params.values():
            p[...] = vector[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def check_finite_grads(self) -> None:
        for name in self.touched:
            if not np.all(np.isfinite(self.grads[name])):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass
class ForwardCache:
    obs: np.ndarray
    hiddens: list[np.ndarray]
    detach: frozenset[str]


class Network:
    """A tanh MLP torso shared by one or more linear heads.

    Value heads (output size 1) return a vector of shape ``[batch]``; other heads
    return ``[batch, size]``.
    """

    def __init__(
        self,
        obs_dim: int,
        hidden: Iterable[int],
        heads: Mapping[str, int],
        rng: np.random.Generator,
        head_gains: Mapping[str, float] | None = None,
        dtype: str = "float64",
    ):
        if dtype not in DTYPES:
            raise ConfigurationError(f"unknown dtype {dtype!r}")
        self.obs_dim = int(obs_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.heads = dict(heads)
        self.dtype = DTYPES[dtype]
        head_gains = dict(head_gains or {})
        self.params = ParameterSet()
        sizes = (self.obs_dim,) + self.hidden
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params.add(f"torso.{i}.w", orthogonal((n_in, n_out), np.sqrt(2.0), rng).astype(self.dtype))
            self.params.add(f"torso.{i}.b", np.zeros(n_out, dtype=self.dtype))
        for head, size in self.heads.items():
            gain = head_gains.get(head, 1.0)
            self.params.add(f"{head}.w", orthogonal((sizes[-1], size), gain, rng).astype(self.dtype))
            self.params.add(f"{head}.b", np.zeros(size, dtype=self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.hidden)

    def torso_names(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("torso.")]

    def head_names(self, head: str) -> list[str]:
        return [f"{head}.w", f"{head}.b"]

    def forward(
        self, obs: np.ndarray, detach: Iterable[str] = ()
    ) -> tuple[dict[str, np.ndarray], ForwardCache]:
        obs = np.asarray(obs, dtype=self.dtype)
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ConfigurationError(
                f"observation shape {obs.shape} does not match torso input dim {self.obs_dim}"
            )
        p = self.params.params
        h = obs
        hiddens = []
        for i in range(self.n_layers):
            h = np.tanh(h @ p[f"torso.{i}.w"] + p[f"torso.{i}.b"])
            hiddens.append(h)
        out = {}
        for head, size in self.heads.items():
            y = h @ p[f"{head}.w"] + p[f"{head}.b"]
            out[head] = y[:, 0] if size == 1 else y
        return out, ForwardCache(obs, hiddens, frozenset(detach))

    def backward(self, cache: ForwardCache, out_grads: Mapping[str, np.ndarray]) -> None:
        """Accumulate d(loss)/d(params) given d(loss)/d(outputs) for some heads.

        Heads listed in ``cache.detach`` train their own weights but pass nothing
        back into the torso.
        """
        p = self.params.params
        feat = cache.hiddens[-1] if cache.hiddens else cache.obs
        d_feat = None
        for head, g in out_grads.items():
            if g is None:
                continue
            g = np.asarray(g, dtype=self.dtype)
            if self.heads[head] == 1:
                g = g[:, None]
            self.params.accumulate(f"{head}.w", feat.T @ g)
            self.params.accumulate(f"{head}.b", g.sum(axis=0))
            if head in cache.detach:
                continue
            contrib = g @ p[f"{head}.w"].T
            d_feat = contrib if d_feat is None else d_feat + contrib
        if d_feat is not None:
            for i in reversed(range(self.n_layers)):
                h = cache.hiddens[i]
                d_pre = d_feat * (1.0 - h * h)
                below = cache.hiddens[i - 1] if i > 0 else cache.obs
                self.params.accumulate(f"torso.{i}.w", below.T @ d_pre)
                self.params.accumulate(f"torso.{i}.b", d_pre.sum(axis=0))
                if i > 0:
                    d_feat = d_pre @ p[f"torso.{i}.w"].T
        self.params.check_finite_grads()


def policy_network(
    obs_dim: int,
    n_actions: int,
    hidden: Iterable[int],
    rng: np.random.Generator,
    aux_head: bool = True,
    value_head: bool = False,
    dtype: str = "float64",
) -> Network:
    heads = {"logits": n_actions}
    if aux_head:
        heads["aux_value"] = 1
    if value_head:
        heads["value"] = 1
    gains = {"logits": 0.01, "aux_value": 1.0, "value": 1.0}
    return Network(obs_dim, hidden, heads, rng, gains, dtype)


def value_network(obs_dim: int, hidden: Iterable[int], rng: np.random.Generator, dtype: str = "float64") -> Network:
    return Network(obs_dim, hidden, {"value": 1}, rng, {"value": 1.0}, dtype)


@dataclass
class PolicyOutput:
    logits: np.ndarray
    aux_value: np.ndarray | None
    value: np.ndarray | None
    cache: ForwardCache


def forward_policy(net: Network, obs: np.ndarray, detach_torso_for_value: bool = False) -> PolicyOutput:
    """Run a policy network; optionally stop the true value head's torso gradient."""
    out, cache = net.forward(obs, detach=("value",) if detach_torso_for_value else ())
    return PolicyOutput(out["logits"], out.get("aux_value"), out.get("value"), cache)


# ---------------------------------------------------------------------------
# Categorical distribution over logits (rows are states)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    actions = np.asarray(actions)
    n_actions = logits.shape[-1]
    if actions.size and (actions.min() < 0 or actions.max() >= n_actions):
        raise IndexError(f"action index out of range [0, {n_actions})")
    logp = log_softmax(logits)
    return np.take_along_axis(logp, actions[:, None].astype(np.intp), axis=-1)[:, 0]


def entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def entropy_grad(logits: np.ndarray) -> np.ndarray:
    """d entropy / d logits, row-wise: -p * (log p + H)."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1, keepdims=True)
    return -p * (logp + h)


def kl_divergence(old_logits: np.ndarray, new_logits: np.ndarray) -> np.ndarray:
    """KL(old || new) per row."""
    if old_logits.shape != new_logits.shape:
        raise ConfigurationError("KL requires matching action counts")
    logp = log_softmax(old_logits)
    logq = log_softmax(new_logits)
    return (np.exp(logp) * (logp - logq)).sum(axis=-1)


def kl_grad_new(old_logits: np.ndarray, new_logits: np.ndarray) -> np.ndarray:
    """d KL(old || new) / d new_logits = softmax(new) - softmax(old)."""
    return softmax(new_logits) - softmax(old_logits)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((params.grads[n] ** 2).sum()) for n in params.touched)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for n in params.touched:
            params.grads[n] *= scale
    return total


def adam_step(params: ParameterSet, state: AdamState, lr: float, max_grad_norm: float | None = None) -> None:
    """Bias-corrected Adam over the parameters that received gradients.

    Untouched parameters keep their values and moments, so a backward pass that
    never reaches a tensor leaves it bitwise unchanged.
    """
    if not params.touched:
        raise RuntimeError("adam_step called with no populated gradients")
    if max_grad_norm:
        clip_grad_norm(params, max_grad_norm)
    state.t += 1
    for name in params.names():
        if name not in params.touched:
            continue
        g = params.grads[name]
        p = params.params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.steps[name] = 0
        state.steps[name] += 1
        k = state.steps[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**k)
        v_hat = v / (1.0 - state.beta2**k)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite value in parameter {name!r} after Adam step")


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: a numpy .npz archive. Key "header" holds a JSON string
#   {"format": "phasicpg-checkpoint", "version": 1, "step": int, "extra": {...}}.
# For every network <net>:
#   param/<net>/<name>          parameter tensor
#   adam/<net>/m/<name>         first moment (if the tensor has been stepped)
#   adam/<net>/v/<name>         second moment
#   adam/<net>/steps/<name>     per-tensor step count (int64 scalar)
#   adam/<net>/t                global optimizer step counter
# Extra arrays (e.g. reward-normalizer state) live under extra/<name>.


def save_checkpoint(
    path: str | Path,
    networks: Mapping[str, ParameterSet],
    optimizers: Mapping[str, AdamState],
    step: int,
    extra_arrays: Mapping[str, np.ndarray] | None = None,
    extra_meta: Mapping | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "step": int(step), "extra": dict(extra_meta or {})}
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    for net, ps in networks.items():
        for name, value in ps.params.items():
            arrays[f"param/{net}/{name}"] = value
        opt = optimizers.get(net)
        if opt is not None:
            arrays[f"adam/{net}/t"] = np.array(opt.t, dtype=np.int64)
            for name in opt.m:
                arrays[f"adam/{net}/m/{name}"] = opt.m[name]
                arrays[f"adam/{net}/v/{name}"] = opt.v[name]
                arrays[f"adam/{net}/steps/{name}"] = np.array(opt.steps[name], dtype=np.int64)
    for name, value in (extra_arrays or {}).items():
        arrays[f"extra/{name}"] = np.asarray(value)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(
    path: str | Path,
    networks: Mapping[str, ParameterSet],
    optimizers: Mapping[str, AdamState],
) -> tuple[dict, dict[str, np.ndarray]]:
    """Restore parameters and Adam moments in place; returns (header, extra arrays)."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint header {header}")
        for net, ps in networks.items():
            for name in ps.names():
                key = f"param/{net}/{name}"
                if key not in data:
                    raise ConfigurationError(f"checkpoint missing {key}")
                ps.params[name][...] = data[key]
            opt = optimizers.get(net)
            if opt is None:
                continue
            opt.m.clear(), opt.v.clear(), opt.steps.clear()
            if f"adam/{net}/t" in data:
                opt.t = int(data[f"adam/{net}/t"])
            prefix = f"adam/{net}/m/"
            for key in data.files:
                if key.startswith(prefix):
                    name = key[len(prefix) :]
                    opt.m[name] = data[key].copy()
                    opt.v[name] = data[f"adam/{net}/v/{name}"].copy()
                    opt.steps[name] = int(data[f"adam/{net}/steps/{name}"])
        extra = {k[len("extra/") :]: data[k].copy() for k in data.files if k.startswith("extra/")}
    return header, extra
