"""Policy, value, auxiliary and distillation losses with their analytic gradients.

Objectives written for maximization (the clipped surrogate, the entropy bonus) are
returned as-is by the ``loss_*`` functions; the ``*_grad`` helpers return the
gradient of the quantity the trainer *minimizes*, i.e. with the sign flipped.
All means are over the minibatch.
"""
from __future__ import annotations

import numpy as np

from .nn import entropy, entropy_grad, kl_divergence, kl_grad_new


def _ratio(logp_new: np.ndarray, logp_old: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        r = np.exp(logp_new - logp_old)
    if not np.all(np.isfinite(r)):
        kl = float(np.mean(logp_old - logp_new))
        raise FloatingPointError(f"non-finite probability ratio (sampled-action KL estimate {kl:.3g})")
    return r


def loss_clip(logp_new, logp_old, adv, eps: float) -> float:
    """Clipped surrogate objective (to be maximized)."""
    r = _ratio(np.asarray(logp_new), np.asarray(logp_old))
    return float(np.mean(np.minimum(r * adv, np.clip(r, 1.0 - eps, 1.0 + eps) * adv)))


def clip_surrogate_grad(logp_new, logp_old, adv, eps: float) -> tuple[float, np.ndarray, float]:
    """(-L_clip, d(-L_clip)/d logp_new, clip fraction)."""
    r = _ratio(logp_new, logp_old)
    unclipped = r * adv
    clipped = np.clip(r, 1.0 - eps, 1.0 + eps) * adv
    # gradient flows only where the unclipped term is the minimum
    active = unclipped <= clipped
    n = len(adv)
    grad = np.where(active, -unclipped / n, 0.0)
    clip_frac = float(np.mean(np.abs(r - 1.0) > eps))
    return -float(np.mean(np.minimum(unclipped, clipped))), grad, clip_frac


def loss_value(v_pred, v_targ) -> float:
    d = np.asarray(v_pred) - np.asarray(v_targ)
    return float(np.mean(0.5 * d * d))


def value_grad(v_pred, v_targ) -> tuple[float, np.ndarray]:
    d = v_pred - v_targ
    return float(np.mean(0.5 * d * d)), d / len(d)


def loss_aux(aux_value, v_targ) -> float:
    """Same squared error as :func:`loss_value`, applied to the policy's auxiliary head."""
    return loss_value(aux_value, v_targ)


def loss_joint(aux_value, v_targ, logits_frozen, logits_current, beta_clone: float) -> float:
    return loss_aux(aux_value, v_targ) + beta_clone * float(np.mean(kl_divergence(logits_frozen, logits_current)))


def joint_grad(aux_value, v_targ, logits_frozen, logits_current, beta_clone: float):
    """Returns (L_joint, aux term, mean clone KL, d/d aux_value, d/d logits)."""
    aux, d_aux = value_grad(aux_value, v_targ)
    kl = float(np.mean(kl_divergence(logits_frozen, logits_current)))
    d_logits = beta_clone * kl_grad_new(logits_frozen, logits_current) / len(v_targ)
    return aux + beta_clone * kl, aux, kl, d_aux, d_logits


def loss_kl_policy(logp_new, logp_old, adv, logits_old, logits_new, beta_pi: float) -> float:
    """Fixed-weight KL penalty policy loss (to be minimized)."""
    r = _ratio(np.asarray(logp_new), np.asarray(logp_old))
    return float(np.mean(-adv * r + beta_pi * kl_divergence(logits_old, logits_new)))


def entropy_bonus(logits) -> float:
    return float(np.mean(entropy(logits)))


def policy_loss_grad(
    logits: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    ent_coef: float,
    clip_eps: float,
    logits_old: np.ndarray | None = None,
    beta_pi: float | None = None,
) -> tuple[dict, np.ndarray]:
    """Policy-phase loss and its gradient with respect to the logits.

    Uses the clipped surrogate unless ``beta_pi`` is given, in which case the
    fixed KL-penalty objective replaces it (``logits_old`` required; ``clip_eps``
    then only sets the clip-fraction telemetry). The entropy bonus is subtracted
    in both cases.
    """
    n = len(actions)
    logp_all = logits - logits.max(axis=1, keepdims=True)
    logp_all = logp_all - np.log(np.exp(logp_all).sum(axis=1, keepdims=True))
    logp_new = logp_all[np.arange(n), actions]
    stats = {}
    if beta_pi is None:
        pg_loss, d_logp, stats["clip_frac"] = clip_surrogate_grad(logp_new, logp_old, adv, clip_eps)
        d_logits = np.zeros_like(logits)
    else:
        if logits_old is None:
            raise ValueError("the KL-penalty objective needs logits_old")
        r = _ratio(logp_new, logp_old)
        kl = kl_divergence(logits_old, logits)
        pg_loss = float(np.mean(-adv * r + beta_pi * kl))
        d_logp = -adv * r / n
        d_logits = beta_pi * kl_grad_new(logits_old, logits) / n
        stats["clip_frac"] = float(np.mean(np.abs(r - 1.0) > clip_eps))
    # d logp(a)/d logits = onehot(a) - softmax
    probs = np.exp(logp_all)
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), actions] = 1.0
    d_logits += d_logp[:, None] * (onehot - probs)
    ent = float(np.mean(entropy(logits)))
    d_logits -= ent_coef * entropy_grad(logits) / n
    stats["policy_loss"] = pg_loss
    stats["entropy"] = ent
    return stats, d_logits
