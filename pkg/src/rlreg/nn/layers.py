"""Forward/backward kernels for the fixed layer set.

Convolution and dense kernels take a leading batch axis so the trunk can be
back-propagated for a whole unroll window in one pass; the LSTM cell works
one step at a time.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


def conv_output_size(n: int, kernel: int, stride: int) -> int:
    return (n - kernel) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """Valid (unpadded) strided convolution.

    x: (N, C, H, W), w: (F, C, k, k).  Returns ``(out, cols)`` where ``cols`` is
    the ``(N, C*k*k, Ho*Wo)`` patch matrix needed by the backward pass.
    """
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho, wo = conv_output_size(h, k, stride), conv_output_size(wd, k, stride)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    out = np.matmul(w.reshape(f, -1), cols) + b[:, None]
    return out.reshape(n, f, ho, wo), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, stride: int,
                    in_shape: tuple[int, ...] | None = None):
    """Returns ``(dx, dw, db)``; ``dx`` is None unless ``in_shape`` is given."""
    n, f, ho, wo = dout.shape
    d = dout.reshape(n, f, ho * wo)
    dw = np.tensordot(d, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = d.sum(axis=(0, 2))
    if in_shape is None:
        return None, dw, db
    _, c, k, _ = w.shape
    dcols = np.matmul(w.reshape(f, -1).T, d).reshape(n, c, k, k, ho, wo)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + span_h:stride, j:j + span_w:stride] += dcols[:, :, i, j]
    return dx, dw, db


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x: (N, in), w: (out, in)."""
    return x @ w.T + b


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0)))


def elu_grad(z: np.ndarray) -> np.ndarray:
    # f'(0) = exp(0) = 1, so the derivative is continuous at 0
    return np.where(z > 0, 1, np.exp(np.minimum(z, 0))).astype(z.dtype, copy=False)


def lstm_forward(x: np.ndarray, h: np.ndarray, c: np.ndarray, w: np.ndarray, b: np.ndarray):
    """One LSTM step, gates ordered (input, forget, candidate, output).

    w: (4H, in + H).  Returns ``(h', c', cache)``.
    """
    hid = h.shape[0]
    xh = np.concatenate([x, h])
    z = w @ xh + b
    i = expit(z[:hid])
    f = expit(z[hid:2 * hid])
    g = np.tanh(z[2 * hid:3 * hid])
    o = expit(z[3 * hid:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, c, i, f, g, o, tc)


def lstm_backward(dh: np.ndarray, dc: np.ndarray, cache, w: np.ndarray):
    """Returns ``(dz, dxh, dc_prev)``; weight gradients are ``outer(dz, xh)``
    and ``dz``, accumulated by the caller."""
    xh, c, i, f, g, o, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1 - tc * tc)
    di = dct * g
    dg = dct * i
    df = dct * c
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)])
    return dz, w.T @ dz, dct * f


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Natural-log entropy; zero-probability entries contribute nothing."""
    p = np.asarray(probs)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=-1)


def entropy_grad_logits(logits: np.ndarray) -> np.ndarray:
    """d H(softmax(z)) / dz = -p * (log p + H)."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -np.sum(p * logp, axis=-1, keepdims=True)
    return -p * (logp + h)


def cross_entropy_grad_logits(logits: np.ndarray, target: np.ndarray | int) -> np.ndarray:
    """d(-log softmax(z)[target]) / dz = p - onehot(target)."""
    p = softmax(logits)
    idx = np.asarray(target)
    g = p.copy()
    if g.ndim == 1:
        g[int(idx)] -= 1
    else:
        g[np.arange(g.shape[0]), idx] -= 1
    return g
