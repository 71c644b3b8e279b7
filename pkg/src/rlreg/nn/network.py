"""Combined policy/value network: three ELU convolutions, an ELU dense layer,
an LSTM (or a stateless ELU dense layer in the ablation), and two linear heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers

# Observations lie in [0, 1].  Centering them keeps the first-layer weight
# gradients from sharing one sign, which otherwise drives the trunk toward an
# input-independent response within a few hundred Adam steps.
INPUT_OFFSET = 0.5


class NetworkConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 84
    in_channels: int = 2
    conv: tuple[tuple[int, int, int], ...] = ((16, 8, 4), (16, 4, 2), (32, 4, 2))
    fc_width: int = 256
    recurrent: str = "lstm"          # "lstm" | "fc"
    recurrent_width: int = 256
    n_actions: int = 8

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in c) for c in self.conv))
        if self.recurrent not in ("lstm", "fc"):
            raise NetworkConfigError(f"recurrent must be 'lstm' or 'fc', got {self.recurrent!r}")
        self.conv_sizes()

    @classmethod
    def fc_ablation(cls, **kw) -> "NetworkConfig":
        """The LSTM replaced by a 128-wide ELU dense layer."""
        return cls(recurrent="fc", recurrent_width=128, **kw)

    def conv_sizes(self) -> list[int]:
        sizes, n = [], self.input_size
        for ch, k, stride in self.conv:
            n = layers.conv_output_size(n, k, stride)
            if n < 1:
                raise NetworkConfigError(
                    f"input size {self.input_size} collapses below 1 at conv {(ch, k, stride)}")
            sizes.append(n)
        return sizes

    @property
    def flat_size(self) -> int:
        return self.conv[-1][0] * self.conv_sizes()[-1] ** 2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = self.in_channels
        for i, (ch, k, _) in enumerate(self.conv, start=1):
            shapes[f"conv{i}.w"] = (ch, c_in, k, k)
            shapes[f"conv{i}.b"] = (ch,)
            c_in = ch
        shapes["fc.w"] = (self.fc_width, self.flat_size)
        shapes["fc.b"] = (self.fc_width,)
        hid = self.recurrent_width
        if self.recurrent == "lstm":
            shapes["lstm.w"] = (4 * hid, self.fc_width + hid)
            shapes["lstm.b"] = (4 * hid,)
        else:
            shapes["rec.w"] = (hid, self.fc_width)
            shapes["rec.b"] = (hid,)
        shapes["policy.w"] = (self.n_actions, hid)
        shapes["policy.b"] = (self.n_actions,)
        shapes["value.w"] = (1, hid)
        shapes["value.b"] = (1,)
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


class NetworkParams:
    """Named weight blocks for one :class:`NetworkConfig`."""

    def __init__(self, config: NetworkConfig, arrays: dict[str, np.ndarray]):
        shapes = config.param_shapes()
        if list(arrays) != list(shapes):
            raise NetworkConfigError(f"parameter blocks {list(arrays)} do not match config {list(shapes)}")
        for name, shape in shapes.items():
            if arrays[name].shape != shape:
                raise NetworkConfigError(f"{name}: shape {arrays[name].shape}, expected {shape}")
        self.config = config
        self.arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    @property
    def dtype(self):
        return self.arrays["fc.w"].dtype

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def count(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".b"):
            arr = np.zeros(shape)
            if name == "lstm.b":
                hid = config.recurrent_width
                arr[hid:2 * hid] = 1.0
        else:
            if len(shape) == 4:
                rf = shape[2] * shape[3]
                fan_in, fan_out = shape[1] * rf, shape[0] * rf
            else:
                fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-bound, bound, size=shape)
        arrays[name] = arr.astype(dtype)
    return NetworkParams(config, arrays)


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, config: NetworkConfig, dtype=np.float32) -> "LstmState":
        return cls(np.zeros(config.recurrent_width, dtype), np.zeros(config.recurrent_width, dtype))

    def copy(self) -> "LstmState":
        return LstmState(self.h.copy(), self.c.copy())

    def is_zero(self) -> bool:
        return not (self.h.any() or self.c.any())


@dataclass
class ForwardTape:
    """Activations of consecutive forward steps, consumed by :func:`backward`."""
    steps: list = field(default_factory=list)

    def append(self, cache: dict) -> None:
        self.steps.append(cache)

    def __len__(self) -> int:
        return len(self.steps)


def forward(params: NetworkParams, obs: np.ndarray, state: LstmState):
    """One step.  Returns ``(logits, value, new_state, cache)``."""
    cfg = params.config
    n = cfg.input_size
    if obs.shape != (cfg.in_channels, n, n):
        raise ValueError(f"observation shape {obs.shape}, expected {(cfg.in_channels, n, n)}")
    dtype = params.dtype
    a = (obs.astype(dtype, copy=False) - dtype.type(INPUT_OFFSET))[None]
    cache: dict = {}
    for i, (_, _, stride) in enumerate(cfg.conv, start=1):
        cache[f"in{i}_shape"] = a.shape
        z, cache[f"cols{i}"] = layers.conv2d_forward(a, params[f"conv{i}.w"], params[f"conv{i}.b"], stride)
        cache[f"z{i}"] = z
        a = layers.elu(z)
    flat = a.reshape(1, -1)
    z_fc = layers.dense_forward(flat, params["fc.w"], params["fc.b"])
    a_fc = layers.elu(z_fc)
    cache.update(flat=flat, z_fc=z_fc, a_fc=a_fc)
    if cfg.recurrent == "lstm":
        h, c, cache["lstm"] = layers.lstm_forward(a_fc[0], state.h.astype(dtype, copy=False),
                                                  state.c.astype(dtype, copy=False),
                                                  params["lstm.w"], params["lstm.b"])
        new_state = LstmState(h, c)
        feat = h
    else:
        z_rec = layers.dense_forward(a_fc, params["rec.w"], params["rec.b"])
        cache["z_rec"] = z_rec
        feat = layers.elu(z_rec)[0]
        new_state = state
    cache["feat"] = feat
    logits = params["policy.w"] @ feat + params["policy.b"]
    value = float((params["value.w"] @ feat + params["value.b"])[0])
    return logits, value, new_state, cache


def backward(params: NetworkParams, tape: ForwardTape, d_logits, d_values) -> dict[str, np.ndarray]:
    """Back-propagate head gradients through a window of steps.

    ``d_logits`` is ``(T, n_actions)`` and ``d_values`` is ``(T,)``: the loss
    gradient with respect to each step's logits and value.  Gradients do not
    flow into the recurrent state that entered the window.
    """
    cfg = params.config
    steps = tape.steps
    t_len = len(steps)
    dtype = params.dtype
    d_logits = np.asarray(d_logits, dtype=dtype).reshape(t_len, cfg.n_actions) if t_len else None
    d_values = np.asarray(d_values, dtype=dtype).reshape(t_len) if t_len else None
    if t_len == 0:
        return params.zeros_like()
    grads: dict[str, np.ndarray] = {}

    feats = np.stack([s["feat"] for s in steps])
    grads["policy.w"] = d_logits.T @ feats
    grads["policy.b"] = d_logits.sum(axis=0)
    grads["value.w"] = d_values[None, :] @ feats
    grads["value.b"] = np.array([d_values.sum()], dtype=dtype)
    d_feat = d_logits @ params["policy.w"] + d_values[:, None] * params["value.w"]

    a_fc = np.concatenate([s["a_fc"] for s in steps])
    if cfg.recurrent == "lstm":
        w = params["lstm.w"]
        n_in = cfg.fc_width
        hid = cfg.recurrent_width
        dz_all = np.empty((t_len, 4 * hid), dtype=dtype)
        xh_all = np.empty((t_len, n_in + hid), dtype=dtype)
        d_a_fc = np.empty((t_len, n_in), dtype=dtype)
        dh_next = np.zeros(hid, dtype=dtype)
        dc_next = np.zeros(hid, dtype=dtype)
        for t in range(t_len - 1, -1, -1):
            cache = steps[t]["lstm"]
            dz, dxh, dc_next = layers.lstm_backward(d_feat[t] + dh_next, dc_next, cache, w)
            dz_all[t] = dz
            xh_all[t] = cache[0]
            d_a_fc[t] = dxh[:n_in]
            dh_next = dxh[n_in:]
        grads["lstm.w"] = dz_all.T @ xh_all
        grads["lstm.b"] = dz_all.sum(axis=0)
    else:
        z_rec = np.concatenate([s["z_rec"] for s in steps])
        dz = d_feat * layers.elu_grad(z_rec)
        d_a_fc, grads["rec.w"], grads["rec.b"] = layers.dense_backward(dz, a_fc, params["rec.w"])

    z_fc = np.concatenate([s["z_fc"] for s in steps])
    flat = np.concatenate([s["flat"] for s in steps])
    dz = d_a_fc * layers.elu_grad(z_fc)
    d_flat, grads["fc.w"], grads["fc.b"] = layers.dense_backward(dz, flat, params["fc.w"])

    n_conv = len(cfg.conv)
    last_z = steps[0][f"z{n_conv}"]
    d_a = d_flat.reshape((t_len,) + last_z.shape[1:])
    for i in range(n_conv, 0, -1):
        z = np.concatenate([s[f"z{i}"] for s in steps])
        cols = np.concatenate([s[f"cols{i}"] for s in steps])
        dz = d_a * layers.elu_grad(z)
        in_shape = (t_len,) + steps[0][f"in{i}_shape"][1:] if i > 1 else None
        d_a, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv2d_backward(
            dz, cols, params[f"conv{i}.w"], cfg.conv[i - 1][2], in_shape)

    return {name: grads[name].astype(dtype, copy=False) for name in params}


def run_window(params: NetworkParams, observations, state: LstmState):
    """Forward a sequence of observations; returns ``(logits, values, state, tape)``."""
    tape = ForwardTape()
    logits, values = [], []
    for obs in observations:
        lg, v, state, cache = forward(params, obs, state)
        tape.append(cache)
        logits.append(lg)
        values.append(v)
    return np.array(logits), np.array(values), state, tape
