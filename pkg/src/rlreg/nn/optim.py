"""Adam and the lock-per-block parameter store shared by asynchronous workers."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .network import NetworkParams

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: dict[str, int]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), {k: 0 for k in params})

    @property
    def timestep(self) -> int:
        return max(self.t.values(), default=0)

    def copy(self) -> "AdamState":
        return AdamState({k: v.copy() for k, v in self.m.items()},
                         {k: v.copy() for k, v in self.v.items()}, dict(self.t))


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                lr: float, beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> int:
    """Bias-corrected Adam on one block, in place.  Returns the new timestep."""
    t += 1
    m *= beta1
    m += (1 - beta1) * g
    v *= beta2
    v += (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return t


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> NetworkParams:
    for name in params:
        state.t[name] = adam_update(params[name], grads[name], state.m[name], state.v[name],
                                    state.t[name], lr)
    return params


class SharedParameters:
    """Parameters plus one Adam state, updated by many workers.

    Every block has its own lock.  ``snapshot`` copies block by block, so a
    snapshot may mix update generations across blocks but never within one;
    ``apply`` runs one Adam update per block under that block's lock.
    """

    def __init__(self, params: NetworkParams, adam: AdamState | None = None, lr: float = 1e-4,
                 max_grad_norm: float | None = None):
        self.params = params
        self.adam = adam if adam is not None else AdamState.zeros_like(params)
        self.lr = lr
        self.max_grad_norm = max_grad_norm
        self._locks = {name: threading.Lock() for name in params}
        self.update_counts = {name: 0 for name in params}

    @property
    def config(self):
        return self.params.config

    def snapshot(self) -> NetworkParams:
        arrays = {}
        for name in self.params:
            with self._locks[name]:
                arrays[name] = self.params[name].copy()
        return NetworkParams(self.params.config, arrays)

    def apply(self, grads: dict[str, np.ndarray]) -> None:
        if self.max_grad_norm:
            clip_grad_norm(grads, self.max_grad_norm)
        for name in self.params:
            with self._locks[name]:
                self.adam.t[name] = adam_update(self.params[name], grads[name], self.adam.m[name],
                                                self.adam.v[name], self.adam.t[name], self.lr)
                self.update_counts[name] += 1
