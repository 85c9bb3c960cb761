"""Finite-difference verification of every training loss's analytic gradient.

Each check builds a tiny float64 network, evaluates the loss through the forward pass
and the plain ``loss_*`` functions only, and compares central differences against
the parameter gradient produced by the ``*_grad`` helpers plus ``Network.backward``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .nn import Network, entropy_grad, log_prob, policy_network, value_network

OBS_DIM = 4
HIDDEN = (5, 5)
N_ACTIONS = 3
BATCH = 7


@dataclass
class GradCheckResult:
    loss: str
    n_params: int
    rel_error: float


def central_differences(f: Callable[[], float], net: Network, h: float = 1e-5) -> np.ndarray:
    theta = net.params.flat()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        net.params.set_flat(theta)
        up = f()
        theta[i] = old - h
        net.params.set_flat(theta)
        down = f()
        theta[i] = old
        grad[i] = (up - down) / (2 * h)
    net.params.set_flat(theta)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def _instance(rng: np.random.Generator):
    obs = rng.normal(size=(BATCH, OBS_DIM))
    actions = rng.integers(0, N_ACTIONS, size=BATCH)
    adv = rng.normal(size=BATCH)
    targets = rng.normal(size=BATCH)
    return obs, actions, adv, targets


def _policy_case(rng, loss: str):
    net = policy_network(OBS_DIM, N_ACTIONS, HIDDEN, rng, aux_head=True)
    # scale the logit head up so the policy is far from uniform
    net.params["logits.w"][...] *= 100.0
    obs, actions, adv, targets = _instance(rng)
    logits0 = net.forward(obs)[0]["logits"]
    old_logits = logits0 + 0.3 * rng.normal(size=logits0.shape)
    logp_old = log_prob(old_logits, actions)
    eps, ent_coef, beta = 0.2, 0.01, 1.0

    def value_of() -> float:
        out = net.forward(obs)[0]
        logits = out["logits"]
        if loss == "clip":
            pg = -losses.loss_clip(log_prob(logits, actions), logp_old, adv, eps)
            return pg - ent_coef * losses.entropy_bonus(logits)
        if loss == "kl":
            pg = losses.loss_kl_policy(log_prob(logits, actions), logp_old, adv, old_logits, logits, beta)
            return pg - ent_coef * losses.entropy_bonus(logits)
        if loss == "entropy":
            return -ent_coef * losses.entropy_bonus(logits)
        if loss == "aux":
            return losses.loss_aux(out["aux_value"], targets)
        if loss == "joint":
            return losses.loss_joint(out["aux_value"], targets, old_logits, logits, beta)
        raise KeyError(loss)

    def analytic() -> np.ndarray:
        out, cache = net.forward(obs)
        logits = out["logits"]
        grads = {}
        if loss == "clip":
            _, grads["logits"] = losses.policy_loss_grad(logits, actions, logp_old, adv, ent_coef, eps)
        elif loss == "kl":
            _, grads["logits"] = losses.policy_loss_grad(
                logits, actions, logp_old, adv, ent_coef, eps, logits_old=old_logits, beta_pi=beta
            )
        elif loss == "entropy":
            grads["logits"] = -ent_coef * entropy_grad(logits) / len(logits)
        elif loss == "aux":
            grads["aux_value"] = losses.value_grad(out["aux_value"], targets)[1]
        elif loss == "joint":
            _, _, _, grads["aux_value"], grads["logits"] = losses.joint_grad(
                out["aux_value"], targets, old_logits, logits, beta
            )
        net.params.zero_grad()
        net.backward(cache, grads)
        return net.params.flat_grad()

    return net, value_of, analytic


def _value_case(rng, shared: bool):
    if shared:
        net = policy_network(OBS_DIM, N_ACTIONS, HIDDEN, rng, aux_head=True, value_head=True)
    else:
        net = value_network(OBS_DIM, HIDDEN, rng)
    obs, _, _, targets = _instance(rng)

    def value_of() -> float:
        return losses.loss_value(net.forward(obs)[0]["value"], targets)

    def analytic() -> np.ndarray:
        out, cache = net.forward(obs)
        net.params.zero_grad()
        net.backward(cache, {"value": losses.value_grad(out["value"], targets)[1]})
        return net.params.flat_grad()

    return net, value_of, analytic


LOSSES = ("clip", "value", "aux", "joint", "kl", "entropy", "value-shared")


def check_loss(loss: str, rng: np.random.Generator, h: float = 1e-5) -> GradCheckResult:
    if loss == "value":
        net, f, analytic = _value_case(rng, shared=False)
    elif loss == "value-shared":
        net, f, analytic = _value_case(rng, shared=True)
    else:
        net, f, analytic = _policy_case(rng, loss)
    numeric = central_differences(f, net, h)
    return GradCheckResult(loss, net.params.size, relative_error(analytic(), numeric))


def run_suite(instances: int = 20, seed: int = 0, h: float = 1e-5) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    return [check_loss(loss, rng, h) for loss in LOSSES for _ in range(instances)]

