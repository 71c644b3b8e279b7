"""Central finite-difference checks for every layer and the full network.

All checks run in float64.  The error of a gradient block is
``||analytic - numeric|| / max(||analytic||, ||numeric||)``; a check reports
the worst block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers, losses
from . import network as net

EPS = 1e-5
TOLERANCE = 1e-4

PROBE_CONFIG = net.NetworkConfig(input_size=16, conv=((4, 4, 2), (6, 3, 1), (8, 3, 1)),
                                 fc_width=12, recurrent="lstm", recurrent_width=10)
PROBE_CONFIG_FC = net.NetworkConfig(input_size=16, conv=((4, 4, 2), (6, 3, 1), (8, 3, 1)),
                                    fc_width=12, recurrent="fc", recurrent_width=9)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<24s} max_rel_err={self.max_rel_error:.3e}"


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = EPS,
                 indices=None) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat_x, flat_g = x.reshape(-1), g.reshape(-1)
    for i in (range(flat_x.size) if indices is None else indices):
        old = flat_x[i]
        flat_x[i] = old + eps
        fp = f()
        flat_x[i] = old - eps
        fm = f()
        flat_x[i] = old
        flat_g[i] = (fp - fm) / (2 * eps)
    return g


def _worst(pairs) -> float:
    return max(rel_error(a, n) for a, n in pairs)


def check_conv(index: int, cfg: net.NetworkConfig = PROBE_CONFIG, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed + index)
    c_in = cfg.in_channels if index == 1 else cfg.conv[index - 2][0]
    size = cfg.input_size if index == 1 else cfg.conv_sizes()[index - 2]
    ch, k, stride = cfg.conv[index - 1]
    x = rng.standard_normal((2, c_in, size, size))
    w = rng.standard_normal((ch, c_in, k, k)) * 0.3
    b = rng.standard_normal(ch)
    out, cols = layers.conv2d_forward(x, w, b, stride)
    up = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(layers.conv2d_forward(x, w, b, stride)[0] * up))

    dx, dw, db = layers.conv2d_backward(up, cols, w, stride, x.shape)
    return CheckResult(f"conv{index}", _worst([(dx, numeric_grad(f, x)), (dw, numeric_grad(f, w)),
                                               (db, numeric_grad(f, b))]))


def check_dense(name: str, n_in: int, n_out: int, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, n_in))
    w = rng.standard_normal((n_out, n_in)) * 0.5
    b = rng.standard_normal(n_out)
    up = rng.standard_normal((3, n_out))

    def f():
        return float(np.sum(layers.dense_forward(x, w, b) * up))

    dx, dw, db = layers.dense_backward(up, x, w)
    return CheckResult(name, _worst([(dx, numeric_grad(f, x)), (dw, numeric_grad(f, w)),
                                     (db, numeric_grad(f, b))]))


def check_elu(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    z = rng.uniform(-3, 3, size=50)
    z = z[np.abs(z) > 10 * EPS]
    up = rng.standard_normal(z.shape)

    def f():
        return float(np.sum(layers.elu(z) * up))

    return CheckResult("elu", rel_error(up * layers.elu_grad(z), numeric_grad(f, z)))


def check_lstm(n_in: int = 7, hid: int = 5, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_in)
    h = rng.standard_normal(hid) * 0.5
    c = rng.standard_normal(hid) * 0.5
    w = rng.standard_normal((4 * hid, n_in + hid)) * 0.4
    b = rng.standard_normal(4 * hid) * 0.2
    up_h, up_c = rng.standard_normal(hid), rng.standard_normal(hid)

    def f():
        h2, c2, _ = layers.lstm_forward(x, h, c, w, b)
        return float(np.sum(h2 * up_h) + np.sum(c2 * up_c))

    _, _, cache = layers.lstm_forward(x, h, c, w, b)
    dz, dxh, dc = layers.lstm_backward(up_h, up_c, cache, w)
    return CheckResult("lstm", _worst([(np.outer(dz, cache[0]), numeric_grad(f, w)),
                                       (dz, numeric_grad(f, b)),
                                       (dxh[:n_in], numeric_grad(f, x)),
                                       (dxh[n_in:], numeric_grad(f, h)),
                                       (dc, numeric_grad(f, c))]))


def check_softmax_cross_entropy(n: int = 8, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n) * 2
    target = int(rng.integers(n))

    def f_ce():
        return float(-layers.log_softmax(z)[target])

    def f_ent():
        return float(layers.entropy(layers.softmax(z)))

    ce = rel_error(layers.cross_entropy_grad_logits(z, target), numeric_grad(f_ce, z))
    ent = rel_error(layers.entropy_grad_logits(z), numeric_grad(f_ent, z))
    return CheckResult("softmax_cross_entropy", max(ce, ent))


def _probe_window(cfg: net.NetworkConfig, seed: int, steps: int):
    rng = np.random.default_rng(seed)
    params = net.init_network(cfg, seed, dtype=np.float64)
    for arr in params.arrays.values():  # non-zero biases exercise every path
        arr += rng.normal(0, 0.05, arr.shape)
    n = cfg.input_size
    obs = [rng.uniform(0, 1, (cfg.in_channels, n, n)) for _ in range(steps)]
    state = net.LstmState(rng.normal(0, 0.3, cfg.recurrent_width),
                          rng.normal(0, 0.3, cfg.recurrent_width))
    actions = rng.integers(cfg.n_actions, size=steps)
    returns = rng.normal(0, 2, size=steps)
    return params, obs, state, actions, returns


def check_full_network(cfg: net.NetworkConfig = PROBE_CONFIG, steps: int = 2, beta: float = 0.1,
                       seed: int = 0, max_coords: int | None = None) -> CheckResult:
    """Finite differences of the actor-critic window loss for every parameter.

    With ``max_coords`` only that many random coordinates per block are
    perturbed (for large networks).
    """
    params, obs, state, actions, returns = _probe_window(cfg, seed, steps)
    logits, values, _, tape = net.run_window(params, obs, state.copy())
    adv = returns - values  # frozen: no gradient through the baseline

    def f():
        lg, v, _, _ = net.run_window(params, obs, state.copy())
        logp = layers.log_softmax(lg)
        ent = -np.sum(np.exp(logp) * logp, axis=-1)
        return float(np.sum(-logp[np.arange(steps), actions] * adv - beta * ent
                            + 0.5 * (returns - v) ** 2))

    _, d_logits, d_values = losses.actor_critic_loss(logits, values, actions, returns, beta)
    grads = net.backward(params, tape, d_logits, d_values)
    rng = np.random.default_rng(seed + 99)
    worst = 0.0
    for name in params:
        arr = params[name]
        if max_coords is not None and arr.size > max_coords:
            idx = rng.choice(arr.size, size=max_coords, replace=False)
            num = numeric_grad(f, arr, indices=idx).reshape(-1)[idx]
            ana = grads[name].reshape(-1)[idx]
        else:
            num, ana = numeric_grad(f, arr), grads[name]
        worst = max(worst, rel_error(ana, num))
    label = "network" if cfg.recurrent == "lstm" else "network_fc_ablation"
    return CheckResult(f"{label}[{cfg.input_size}px,T={steps}]", worst)


def run_all(seed: int = 0) -> list[CheckResult]:
    cfg = PROBE_CONFIG
    hid = cfg.recurrent_width
    return [
        check_conv(1, cfg, seed),
        check_conv(2, cfg, seed),
        check_conv(3, cfg, seed),
        check_dense("fc", cfg.flat_size, cfg.fc_width, seed),
        check_lstm(cfg.fc_width, hid, seed),
        check_dense("policy_head", hid, cfg.n_actions, seed + 1),
        check_dense("value_head", hid, 1, seed + 2),
        check_elu(seed),
        check_softmax_cross_entropy(cfg.n_actions, seed),
        check_full_network(PROBE_CONFIG, 2, seed=seed),
        check_full_network(PROBE_CONFIG_FC, 2, seed=seed),
    ]
