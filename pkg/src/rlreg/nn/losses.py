"""Head-level losses and their gradients with respect to logits and values."""
from __future__ import annotations

import numpy as np

from . import layers


def actor_critic_loss(logits: np.ndarray, values: np.ndarray, actions, returns, beta: float):
    """Summed over steps: ``-log pi(a_t) * A_t - beta * H(pi_t) + 0.5 * (R_t - V_t)**2``.

    The advantage ``A_t = R_t - V_t`` is a constant in the policy term.
    Returns ``(loss, d_logits, d_values)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    adv = returns - values
    logp = layers.log_softmax(logits)
    p = np.exp(logp)
    idx = np.arange(len(actions))
    ent = -np.sum(p * logp, axis=-1)
    loss = float(np.sum(-logp[idx, actions] * adv - beta * ent + 0.5 * (returns - values) ** 2))
    d_logits = p.copy()
    d_logits[idx, actions] -= 1.0
    d_logits *= adv[:, None]
    d_logits -= beta * layers.entropy_grad_logits(logits)
    d_values = values - returns
    return loss, d_logits, d_values


def supervised_loss(logits: np.ndarray, values: np.ndarray, targets, returns):
    """Cross-entropy against teacher actions plus ``0.5 * (R_t - V_t)**2``."""
    logits = np.asarray(logits, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    logp = layers.log_softmax(logits)
    idx = np.arange(len(targets))
    loss = float(np.sum(-logp[idx, targets] + 0.5 * (returns - values) ** 2))
    d_logits = layers.cross_entropy_grad_logits(logits, targets)
    return loss, d_logits, values - returns
