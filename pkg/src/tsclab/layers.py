"""Forward/backward kernels for every layer the nine classifiers need.

Every kernel is a pure function: ``*_forward`` returns the output plus a
cache, ``*_backward`` maps the upstream gradient and that cache to exact
gradients of the forward map.  Activations live in time-major batches
shaped ``[batch, time, channels]``; dense layers see ``[batch, features]``.

Gradients are hand-derived per layer; there is no autodiff graph.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DegenerateVarianceError, ShapeError
from .tensor import SplitMix64

EPS_NORM = 1e-5
EPS_LOG = 1e-12
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# convolution

def _conv_padding(length: int, padding: str, T: int) -> tuple[int, int]:
    if padding == "same":
        return (length - 1) // 2, length // 2
    if padding == "valid":
        if length > T:
            raise ValueError(
                f"valid convolution needs filter length {length} <= series length {T}"
            )
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _windows(xp: np.ndarray, length: int, t_out: int) -> np.ndarray:
    # read-only sliding view [batch, t_out, length, C]
    s0, s1, s2 = xp.strides
    return as_strided(
        xp,
        shape=(xp.shape[0], t_out, length, xp.shape[2]),
        strides=(s0, s1, s1, s2),
        writeable=False,
    )


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: str = "same"):
    """Stride-1 cross-correlation of [batch,T,C_in] with filters [C_out,l,C_in]."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[2]:
        raise ShapeError(f"conv1d: input {x.shape} does not conform with filters {w.shape}")
    batch, T, _ = x.shape
    c_out, length, _ = w.shape
    pl, pr = _conv_padding(length, padding, T)
    xp = np.pad(x, ((0, 0), (pl, pr), (0, 0))) if (pl or pr) else x
    t_out = xp.shape[1] - length + 1
    win = _windows(xp, length, t_out)
    y = np.tensordot(win, w, axes=([2, 3], [1, 2])) + b
    cache = (xp, length, pl, T, x.shape, w)
    return y, cache


def conv1d_backward(gy: np.ndarray, cache):
    xp, length, pl, T, x_shape, w = cache
    t_out = gy.shape[1]
    win = _windows(xp, length, t_out)
    gw = np.tensordot(gy, win, axes=([0, 1], [0, 1]))  # [C_out, l, C_in]
    gb = gy.sum(axis=(0, 1))
    # scatter g*w back over the padded input
    gcols = np.tensordot(gy, w, axes=([2], [0]))  # [batch, t_out, l, C_in]
    gxp = np.zeros_like(xp)
    for j in range(length):
        gxp[:, j : j + t_out, :] += gcols[:, :, j, :]
    gx = gxp[:, pl : pl + T, :] if gxp.shape[1] != T else gxp
    return gx.reshape(x_shape), gw, gb


# ---------------------------------------------------------------------------
# dense

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not conform with weights {w.shape}")
    return x @ w + b, (x, w)


def dense_backward(gy: np.ndarray, cache):
    x, w = cache
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


# ---------------------------------------------------------------------------
# normalization

def batch_norm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = BN_MOMENTUM,
    eps: float = EPS_NORM,
):
    """Per-channel normalization over (batch, time).

    Train mode returns updated running statistics; infer mode normalizes
    with the running statistics and leaves them untouched.
    """
    if mode == "infer":
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean) * inv
        return xhat * gamma + beta, ("infer", inv, xhat, gamma), running_mean, running_var
    n = x.shape[0] * x.shape[1]
    if n < 2:
        raise DegenerateVarianceError(
            "batch norm needs at least 2 values per channel in train mode"
        )
    mean = x.mean(axis=(0, 1))
    var = x.var(axis=(0, 1))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    y = xhat * gamma + beta
    new_mean = momentum * running_mean + (1.0 - momentum) * mean
    new_var = momentum * running_var + (1.0 - momentum) * var
    return y, ("train", inv, xhat, gamma, n), new_mean, new_var


def batch_norm_backward(gy: np.ndarray, cache):
    kind = cache[0]
    if kind == "infer":
        _, inv, xhat, gamma = cache
        gx = gy * gamma * inv
        dgamma = (gy * xhat).sum(axis=(0, 1))
        dbeta = gy.sum(axis=(0, 1))
        return gx, dgamma, dbeta
    _, inv, xhat, gamma, n = cache
    dgamma = (gy * xhat).sum(axis=(0, 1))
    dbeta = gy.sum(axis=(0, 1))
    gxhat = gy * gamma
    # backward through the batch statistics
    gx = (inv / n) * (
        n * gxhat
        - gxhat.sum(axis=(0, 1))
        - xhat * (gxhat * xhat).sum(axis=(0, 1))
    )
    return gx, dgamma, dbeta


def instance_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = EPS_NORM):
    """Normalize each (instance, channel) slice over time; affine per channel."""
    T = x.shape[1]
    if T < 2:
        raise DegenerateVarianceError("instance norm needs series length >= 2")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (inv, xhat, gamma, T)


def instance_norm_backward(gy: np.ndarray, cache):
    inv, xhat, gamma, T = cache
    dgamma = (gy * xhat).sum(axis=(0, 1))
    dbeta = gy.sum(axis=(0, 1))
    gxhat = gy * gamma
    gx = (inv / T) * (
        T * gxhat
        - gxhat.sum(axis=1, keepdims=True)
        - xhat * (gxhat * xhat).sum(axis=1, keepdims=True)
    )
    return gx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations

def relu_forward(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_backward(gy, cache):
    return gy * cache


def sigmoid_forward(x):
    # two-branch form avoids exp overflow for large |x|
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(gy, cache):
    return gy * cache * (1.0 - cache)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(gy, cache):
    return gy * (1.0 - cache * cache)


def softmax_forward(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, (y, axis)


def softmax_backward(gy, cache):
    y, axis = cache
    return y * (gy - (gy * y).sum(axis=axis, keepdims=True))


def prelu_forward(x, slopes):
    """PReLU with one learned slope per channel (last axis)."""
    pos = x > 0.0
    y = np.where(pos, x, slopes * x)
    return y, (x, slopes, pos)


def prelu_backward(gy, cache):
    x, slopes, pos = cache
    gx = gy * np.where(pos, 1.0, slopes)
    axes = tuple(range(x.ndim - 1))
    gslopes = (gy * np.where(pos, 0.0, x)).sum(axis=axes)
    return gx, gslopes


_ACTIVATIONS = {
    "relu": (relu_forward, relu_backward),
    "sigmoid": (sigmoid_forward, sigmoid_backward),
    "tanh": (tanh_forward, tanh_backward),
    "softmax": (softmax_forward, softmax_backward),
}


def activation_forward(x, kind: str):
    fwd, _ = _ACTIVATIONS[kind]
    return fwd(x)


def activation_backward(gy, cache, kind: str):
    _, bwd = _ACTIVATIONS[kind]
    return bwd(gy, cache)


# ---------------------------------------------------------------------------
# dropout

def dropout_forward(x, rate: float, mode: str, rng: SplitMix64 | None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    u = rng.uniform(x.size).reshape(x.shape)
    mask = (u >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(gy, cache):
    return gy if cache is None else gy * cache


# ---------------------------------------------------------------------------
# pooling

def pool1d_forward(x, window: int, kind: str):
    """Non-overlapping pooling (stride = window); trailing remainder dropped."""
    batch, T, C = x.shape
    if window < 1 or window > T:
        raise ValueError(f"pool window {window} invalid for series length {T}")
    t_out = T // window
    blocks = x[:, : t_out * window, :].reshape(batch, t_out, window, C)
    if kind == "max":
        idx = blocks.argmax(axis=2)  # first occurrence on ties
        y = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return y, ("max", idx, x.shape, window)
    if kind == "avg":
        return blocks.mean(axis=2), ("avg", None, x.shape, window)
    raise ValueError(f"unknown pooling kind {kind!r}")


def pool1d_backward(gy, cache):
    kind, idx, x_shape, window = cache
    batch, T, C = x_shape
    t_out = gy.shape[1]
    gblocks = np.zeros((batch, t_out, window, C))
    if kind == "max":
        np.put_along_axis(gblocks, idx[:, :, None, :], gy[:, :, None, :], axis=2)
    else:
        gblocks[:] = (gy / window)[:, :, None, :]
    gx = np.zeros(x_shape)
    gx[:, : t_out * window, :] = gblocks.reshape(batch, t_out * window, C)
    return gx


def gap_forward(x):
    """Global average pooling over time: [batch,T,C] -> [batch,C]."""
    return x.mean(axis=1), (x.shape[1],)


def gap_backward(gy, cache):
    (T,) = cache
    return np.repeat(gy[:, None, :] / T, T, axis=1)


# ---------------------------------------------------------------------------
# attention

def attention_forward(x):
    """Channel-split attention: softmax half weights the value half over time.

    [batch,T,2H] -> [batch,H]; the first H channels are softmaxed over the
    time axis per channel and used as weights for the last H channels.
    """
    C = x.shape[2]
    if C % 2 != 0:
        raise ValueError(f"attention needs an even channel count, got {C}")
    H = C // 2
    a, v = x[:, :, :H], x[:, :, H:]
    s, _ = softmax_forward(a, axis=1)
    y = (s * v).sum(axis=1)
    return y, (s, v, y, H)


def attention_backward(gy, cache):
    s, v, y, H = cache
    g = gy[:, None, :]  # [batch,1,H]
    gv = s * g
    ga = s * g * (v - y[:, None, :])
    return np.concatenate([ga, gv], axis=2)


# ---------------------------------------------------------------------------
# fixed input transforms (MCNN branches)

def downsample_forward(x, factor: int):
    """Keep every ``factor``-th time step starting at 0."""
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    return x[:, ::factor, :].copy(), (x.shape, factor)


def downsample_backward(gy, cache):
    x_shape, factor = cache
    gx = np.zeros(x_shape)
    gx[:, ::factor, :] = gy
    return gx


def moving_average_forward(x, window: int):
    """Valid moving average of the time axis; output length T - window + 1."""
    T = x.shape[1]
    if window < 1 or window > T:
        raise ValueError(f"moving average window {window} invalid for series length {T}")
    c = np.cumsum(np.pad(x, ((0, 0), (1, 0), (0, 0))), axis=1)
    y = (c[:, window:, :] - c[:, :-window, :]) / window
    return y, (x.shape, window)


def moving_average_backward(gy, cache):
    x_shape, window = cache
    gx = np.zeros(x_shape)
    t_out = gy.shape[1]
    for j in range(window):
        gx[:, j : j + t_out, :] += gy / window
    return gx


def residual_add(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"residual add: shapes {x.shape} and {y.shape} do not match")
    return x + y


# ---------------------------------------------------------------------------
# losses

def _check_one_hot(target: np.ndarray) -> None:
    if target.ndim != 2:
        raise ValueError(f"targets must be [batch, classes], got shape {target.shape}")
    ok = np.all((target == 0.0) | (target == 1.0)) and np.all(target.sum(axis=1) == 1.0)
    if not ok:
        raise ValueError("targets must be one-hot rows")


def cross_entropy_loss(pred: np.ndarray, target: np.ndarray):
    """Mean categorical cross entropy; predictions clipped to [1e-12, 1]."""
    _check_one_hot(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: shapes {pred.shape} and {target.shape} do not match")
    n = pred.shape[0]
    p = np.clip(pred, EPS_LOG, 1.0)
    loss = float(-(target * np.log(p)).sum() / n)
    inside = (pred >= EPS_LOG) & (pred <= 1.0)
    grad = -(target / p) * inside / n
    return loss, grad


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error averaged over the batch (summed over classes)."""
    _check_one_hot(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: shapes {pred.shape} and {target.shape} do not match")
    n = pred.shape[0]
    diff = pred - target
    return float((diff * diff).sum() / n), 2.0 * diff / n


LOSSES = {"cross_entropy": cross_entropy_loss, "mse": mse_loss}
