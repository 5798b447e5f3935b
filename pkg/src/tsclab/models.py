"""The eight feed-forward classifier architectures as declarative layer trees.

A model is a :class:`ModelSpec` (architecture id + geometry + a tree of
layer nodes) plus a flat parameter dict.  Forward composes the layer
kernels in tree order; backward walks the same tree in reverse and
accumulates exact gradients.  Parameters live in insertion order, which
is also the serialization order of the binary blob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .data import SlicingConfig, TimeSeriesDataset, slice_starts
from .errors import ShapeError, UnsupportedArchitectureError
from .tensor import SplitMix64, glorot_uniform

ARCHITECTURES = (
    "mlp", "fcn", "resnet", "encoder", "mcnn", "tlenet", "mcdcnn", "timecnn",
)


# ---------------------------------------------------------------------------
# layer nodes

def _child_prefix(prefix: str, i) -> str:
    return f"{prefix}/{i}" if prefix else str(i)


class Node:
    def init_params(self, in_shape, rng, params, prefix):
        return self.out_shape(in_shape)

    def out_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        raise NotImplementedError

    def backward(self, gy, params, prefix, caches, grads):
        raise NotImplementedError

    def describe(self):
        raise NotImplementedError


class Flatten(Node):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        caches[prefix] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy, params, prefix, caches, grads):
        return gy.reshape(caches[prefix])

    def describe(self):
        return "flatten"


class Dense(Node):
    def __init__(self, units: int):
        self.units = units

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects flat input, got shape {in_shape}")
        return (self.units,)

    def init_params(self, in_shape, rng, params, prefix):
        (f_in,) = in_shape
        params[f"{prefix}.w"] = glorot_uniform(f_in, self.units, (f_in, self.units), rng)
        params[f"{prefix}.b"] = np.zeros(self.units)
        return (self.units,)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.dense_forward(x, params[f"{prefix}.w"], params[f"{prefix}.b"])
        return y

    def backward(self, gy, params, prefix, caches, grads):
        gx, gw, gb = L.dense_backward(gy, caches[prefix])
        grads[f"{prefix}.w"] = grads.get(f"{prefix}.w", 0) + gw
        grads[f"{prefix}.b"] = grads.get(f"{prefix}.b", 0) + gb
        return gx

    def describe(self):
        return f"dense units={self.units}"


class Conv1d(Node):
    def __init__(self, filters: int, length: int, padding: str = "same"):
        self.filters = filters
        self.length = length
        self.padding = padding

    def out_shape(self, in_shape):
        T, _ = in_shape
        if self.padding == "same":
            return (T, self.filters)
        t_out = T - self.length + 1
        if t_out < 1:
            raise ValueError(
                f"valid convolution of length {self.length} on series length {T}"
            )
        return (t_out, self.filters)

    def init_params(self, in_shape, rng, params, prefix):
        _, c_in = in_shape
        fan_in = self.length * c_in
        fan_out = self.length * self.filters
        params[f"{prefix}.w"] = glorot_uniform(
            fan_in, fan_out, (self.filters, self.length, c_in), rng
        )
        params[f"{prefix}.b"] = np.zeros(self.filters)
        return self.out_shape(in_shape)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.conv1d_forward(
            x, params[f"{prefix}.w"], params[f"{prefix}.b"], self.padding
        )
        return y

    def backward(self, gy, params, prefix, caches, grads):
        gx, gw, gb = L.conv1d_backward(gy, caches[prefix])
        grads[f"{prefix}.w"] = grads.get(f"{prefix}.w", 0) + gw
        grads[f"{prefix}.b"] = grads.get(f"{prefix}.b", 0) + gb
        return gx

    def describe(self):
        return f"conv filters={self.filters} length={self.length} padding={self.padding}"


class BatchNorm(Node):
    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng, params, prefix):
        c = in_shape[-1]
        params[f"{prefix}.gamma"] = np.ones(c)
        params[f"{prefix}.beta"] = np.zeros(c)
        params[f"{prefix}.running_mean"] = np.zeros(c)
        params[f"{prefix}.running_var"] = np.ones(c)
        return in_shape

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix], new_mean, new_var = L.batch_norm_forward(
            x,
            params[f"{prefix}.gamma"],
            params[f"{prefix}.beta"],
            params[f"{prefix}.running_mean"],
            params[f"{prefix}.running_var"],
            mode,
        )
        if mode == "train":
            params[f"{prefix}.running_mean"] = new_mean
            params[f"{prefix}.running_var"] = new_var
        return y

    def backward(self, gy, params, prefix, caches, grads):
        gx, dgamma, dbeta = L.batch_norm_backward(gy, caches[prefix])
        grads[f"{prefix}.gamma"] = grads.get(f"{prefix}.gamma", 0) + dgamma
        grads[f"{prefix}.beta"] = grads.get(f"{prefix}.beta", 0) + dbeta
        return gx

    def describe(self):
        return "batch_norm"


class InstanceNorm(Node):
    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng, params, prefix):
        c = in_shape[-1]
        params[f"{prefix}.gamma"] = np.ones(c)
        params[f"{prefix}.beta"] = np.zeros(c)
        return in_shape

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.instance_norm_forward(
            x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"]
        )
        return y

    def backward(self, gy, params, prefix, caches, grads):
        gx, dgamma, dbeta = L.instance_norm_backward(gy, caches[prefix])
        grads[f"{prefix}.gamma"] = grads.get(f"{prefix}.gamma", 0) + dgamma
        grads[f"{prefix}.beta"] = grads.get(f"{prefix}.beta", 0) + dbeta
        return gx

    def describe(self):
        return "instance_norm"


class Act(Node):
    def __init__(self, kind: str):
        self.kind = kind

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.activation_forward(x, self.kind)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.activation_backward(gy, caches[prefix], self.kind)

    def describe(self):
        return f"act {self.kind}"


class PRelu(Node):
    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng, params, prefix):
        params[f"{prefix}.slopes"] = np.full(in_shape[-1], 0.25)
        return in_shape

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.prelu_forward(x, params[f"{prefix}.slopes"])
        return y

    def backward(self, gy, params, prefix, caches, grads):
        gx, gslopes = L.prelu_backward(gy, caches[prefix])
        grads[f"{prefix}.slopes"] = grads.get(f"{prefix}.slopes", 0) + gslopes
        return gx

    def describe(self):
        return "act prelu"


class Dropout(Node):
    def __init__(self, rate: float):
        self.rate = rate

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.dropout_forward(x, self.rate, mode, rng)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.dropout_backward(gy, caches[prefix])

    def describe(self):
        return f"dropout rate={self.rate}"


class Pool1d(Node):
    def __init__(self, kind: str, window: int):
        self.kind = kind
        self.window = window

    def out_shape(self, in_shape):
        T, c = in_shape
        t_out = T // self.window
        if self.window > T or t_out < 1:
            raise ValueError(f"pool window {self.window} invalid for series length {T}")
        return (t_out, c)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.pool1d_forward(x, self.window, self.kind)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.pool1d_backward(gy, caches[prefix])

    def describe(self):
        return f"pool {self.kind} window={self.window}"


class Gap(Node):
    def out_shape(self, in_shape):
        return (in_shape[1],)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        if taps is not None:
            taps[prefix] = x
        y, caches[prefix] = L.gap_forward(x)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.gap_backward(gy, caches[prefix])

    def describe(self):
        return "gap"


class Attention(Node):
    def out_shape(self, in_shape):
        T, c = in_shape
        if c % 2 != 0:
            raise ValueError(f"attention needs an even channel count, got {c}")
        return (c // 2,)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.attention_forward(x)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.attention_backward(gy, caches[prefix])

    def describe(self):
        return "attention"


class Downsample(Node):
    def __init__(self, factor: int):
        self.factor = factor

    def out_shape(self, in_shape):
        T, c = in_shape
        return (-(-T // self.factor), c)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.downsample_forward(x, self.factor)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.downsample_backward(gy, caches[prefix])

    def describe(self):
        return f"downsample factor={self.factor}"


class MovingAvg(Node):
    def __init__(self, window: int):
        self.window = window

    def out_shape(self, in_shape):
        T, c = in_shape
        t_out = T - self.window + 1
        if t_out < 1:
            raise ValueError(f"moving average window {self.window} on series length {T}")
        return (t_out, c)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        y, caches[prefix] = L.moving_average_forward(x, self.window)
        return y

    def backward(self, gy, params, prefix, caches, grads):
        return L.moving_average_backward(gy, caches[prefix])

    def describe(self):
        return f"moving_avg window={self.window}"


class AlignTime(Node):
    """Force the time extent to ``target``: crop the tail or zero-pad it."""

    def __init__(self, target: int):
        self.target = target

    def out_shape(self, in_shape):
        return (self.target, in_shape[1])

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        T = x.shape[1]
        caches[prefix] = T
        if T == self.target:
            return x
        if T > self.target:
            return x[:, : self.target, :]
        pad = self.target - T
        return np.pad(x, ((0, 0), (0, pad), (0, 0)))

    def backward(self, gy, params, prefix, caches, grads):
        T = caches[prefix]
        if T == self.target:
            return gy
        if T > self.target:
            return np.pad(gy, ((0, 0), (0, T - self.target), (0, 0)))
        return gy[:, :T, :]

    def describe(self):
        return f"align_time target={self.target}"


class Sequential(Node):
    def __init__(self, children: list):
        self.children = list(children)

    def init_params(self, in_shape, rng, params, prefix):
        shape = in_shape
        for i, child in enumerate(self.children):
            shape = child.init_params(shape, rng, params, _child_prefix(prefix, i))
        return shape

    def out_shape(self, in_shape):
        shape = in_shape
        for child in self.children:
            shape = child.out_shape(shape)
        return shape

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        for i, child in enumerate(self.children):
            x = child.forward(x, params, _child_prefix(prefix, i), mode, rng, caches, taps)
        return x

    def backward(self, gy, params, prefix, caches, grads):
        for i in range(len(self.children) - 1, -1, -1):
            gy = self.children[i].backward(gy, params, _child_prefix(prefix, i), caches, grads)
        return gy

    def describe(self):
        return [child.describe() for child in self.children]


class Residual(Node):
    """Body branch plus a linear shortcut; both receive the block input."""

    def __init__(self, body: Node, shortcut: Node | None = None):
        self.body = body
        self.shortcut = shortcut

    def init_params(self, in_shape, rng, params, prefix):
        out = self.body.init_params(in_shape, rng, params, _child_prefix(prefix, "body"))
        if self.shortcut is not None:
            sc = self.shortcut.init_params(in_shape, rng, params, _child_prefix(prefix, "sc"))
            if sc != out:
                raise ShapeError(f"residual: body {out} and shortcut {sc} shapes differ")
        elif in_shape != out:
            raise ShapeError(f"residual: identity shortcut needs {in_shape} == {out}")
        return out

    def out_shape(self, in_shape):
        return self.body.out_shape(in_shape)

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        yb = self.body.forward(x, params, _child_prefix(prefix, "body"), mode, rng, caches, taps)
        if self.shortcut is not None:
            ys = self.shortcut.forward(
                x, params, _child_prefix(prefix, "sc"), mode, rng, caches, taps
            )
        else:
            ys = x
        return L.residual_add(yb, ys)

    def backward(self, gy, params, prefix, caches, grads):
        gx = self.body.backward(gy, params, _child_prefix(prefix, "body"), caches, grads)
        if self.shortcut is not None:
            gx = gx + self.shortcut.backward(
                gy, params, _child_prefix(prefix, "sc"), caches, grads
            )
        else:
            gx = gx + gy
        return gx

    def describe(self):
        return {
            "residual": self.body.describe(),
            "shortcut": None if self.shortcut is None else self.shortcut.describe(),
        }


class ConcatChannels(Node):
    """Feed the same input to every branch; concatenate outputs over channels."""

    def __init__(self, branches: list):
        self.branches = list(branches)

    def init_params(self, in_shape, rng, params, prefix):
        outs = [
            b.init_params(in_shape, rng, params, _child_prefix(prefix, f"br{i}"))
            for i, b in enumerate(self.branches)
        ]
        return self._merge(outs)

    def out_shape(self, in_shape):
        return self._merge([b.out_shape(in_shape) for b in self.branches])

    @staticmethod
    def _merge(outs):
        times = {o[0] for o in outs}
        if len(times) != 1:
            raise ShapeError(f"branch time extents differ: {sorted(times)}")
        return (outs[0][0], sum(o[1] for o in outs))

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        ys = [
            b.forward(x, params, _child_prefix(prefix, f"br{i}"), mode, rng, caches, taps)
            for i, b in enumerate(self.branches)
        ]
        caches[prefix] = [y.shape[2] for y in ys]
        return np.concatenate(ys, axis=2)

    def backward(self, gy, params, prefix, caches, grads):
        widths = caches[prefix]
        gx = None
        at = 0
        for i, b in enumerate(self.branches):
            g = b.backward(
                gy[:, :, at : at + widths[i]], params, _child_prefix(prefix, f"br{i}"), caches, grads
            )
            gx = g if gx is None else gx + g
            at += widths[i]
        return gx

    def describe(self):
        return {"concat_branches": [b.describe() for b in self.branches]}


class SplitDims(Node):
    """One branch per input dimension; branch i sees channel i alone."""

    def __init__(self, branches: list):
        self.branches = list(branches)

    def init_params(self, in_shape, rng, params, prefix):
        T, c = in_shape
        if c != len(self.branches):
            raise ShapeError(f"expected {len(self.branches)} input dims, got {c}")
        outs = [
            b.init_params((T, 1), rng, params, _child_prefix(prefix, f"dim{i}"))
            for i, b in enumerate(self.branches)
        ]
        return ConcatChannels._merge(outs)

    def out_shape(self, in_shape):
        T, c = in_shape
        return ConcatChannels._merge([b.out_shape((T, 1)) for b in self.branches])

    def forward(self, x, params, prefix, mode, rng, caches, taps=None):
        ys = [
            b.forward(
                x[:, :, i : i + 1], params, _child_prefix(prefix, f"dim{i}"), mode, rng, caches, taps
            )
            for i, b in enumerate(self.branches)
        ]
        caches[prefix] = (x.shape, [y.shape[2] for y in ys])
        return np.concatenate(ys, axis=2)

    def backward(self, gy, params, prefix, caches, grads):
        x_shape, widths = caches[prefix]
        gx = np.zeros(x_shape)
        at = 0
        for i, b in enumerate(self.branches):
            gx[:, :, i : i + 1] = b.backward(
                gy[:, :, at : at + widths[i]], params, _child_prefix(prefix, f"dim{i}"), caches, grads
            )
            at += widths[i]
        return gx

    def describe(self):
        return {"per_dimension": [b.describe() for b in self.branches]}


# ---------------------------------------------------------------------------
# model spec and builders

@dataclass
class ModelSpec:
    architecture_id: str
    input_length: int
    input_dims: int
    classes: int
    loss: str
    net: Node
    options: dict = field(default_factory=dict)
    slicing: SlicingConfig | None = None

    def describe(self):
        return self.net.describe()


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict
    seed: int = 0
    epochs_run: int = 0
    best_epoch: int = 0


def init_model(spec: ModelSpec, rng: SplitMix64) -> dict:
    """Fresh parameter dict; Glorot draws in layer order, row-major per tensor."""
    params: dict = {}
    out = spec.net.init_params((spec.input_length, spec.input_dims), rng, params, "")
    if out != (spec.classes,):
        raise ShapeError(f"network emits {out}, expected ({spec.classes},)")
    return params


def trainable(name: str) -> bool:
    return ".running_" not in name


def build_mlp(T: int, M: int, K: int) -> ModelSpec:
    if T * M < 1:
        raise ValueError("empty input geometry")
    net = Sequential([
        Flatten(),
        Dropout(0.1), Dense(500), Act("relu"),
        Dropout(0.2), Dense(500), Act("relu"),
        Dropout(0.2), Dense(500), Act("relu"),
        Dropout(0.3), Dense(K), Act("softmax"),
    ])
    return ModelSpec("mlp", T, M, K, "cross_entropy", net)


def build_fcn(T: int, M: int, K: int) -> ModelSpec:
    if T < 8:
        raise ValueError(f"fcn needs series length >= 8, got {T}")
    net = Sequential([
        Conv1d(128, 8, "same"), BatchNorm(), Act("relu"),
        Conv1d(256, 5, "same"), BatchNorm(), Act("relu"),
        Conv1d(128, 3, "same"), BatchNorm(), Act("relu"),
        Gap(), Dense(K), Act("softmax"),
    ])
    return ModelSpec("fcn", T, M, K, "cross_entropy", net)


def build_resnet(T: int, M: int, K: int) -> ModelSpec:
    if T < 8:
        raise ValueError(f"resnet needs series length >= 8, got {T}")

    def block(c_in: int) -> Residual:
        body = Sequential([
            Conv1d(64, 8, "same"), BatchNorm(), Act("relu"),
            Conv1d(64, 5, "same"), BatchNorm(), Act("relu"),
            Conv1d(64, 3, "same"), BatchNorm(), Act("relu"),
        ])
        shortcut = None
        if c_in != 64:
            shortcut = Sequential([Conv1d(64, 1, "same"), BatchNorm()])
        return Residual(body, shortcut)

    net = Sequential([block(M), block(64), block(64), Gap(), Dense(K), Act("softmax")])
    return ModelSpec("resnet", T, M, K, "cross_entropy", net)


def build_encoder(T: int, M: int, K: int) -> ModelSpec:
    if T < 8:
        raise ValueError(f"encoder needs series length >= 8, got {T}")
    net = Sequential([
        Conv1d(128, 5, "same"), InstanceNorm(), PRelu(), Dropout(0.2), Pool1d("max", 2),
        Conv1d(256, 11, "same"), InstanceNorm(), PRelu(), Dropout(0.2), Pool1d("max", 2),
        Conv1d(512, 21, "same"), InstanceNorm(), PRelu(), Dropout(0.2), Pool1d("max", 2),
        Attention(), Dense(K), Act("softmax"),
    ])
    return ModelSpec("encoder", T, M, K, "cross_entropy", net)


MCNN_DOWNSAMPLE_FACTORS = (2, 4, 8)
MCNN_SMOOTHING_WINDOWS = (5, 8, 11)


def mcnn_grid(slice_T: int) -> list[tuple[int, int]]:
    """The (filter_length, pool_factor) search grid for a given slice length."""
    lengths = sorted({max(1, int(math.floor(f * slice_T + 0.5))) for f in (0.05, 0.1, 0.2)})
    return [(fl, pf) for fl in lengths for pf in (2, 3, 5)]


def build_mcnn(slice_T: int, M: int, K: int, filter_length: int, pool_factor: int) -> ModelSpec:
    target = slice_T // pool_factor
    if target < 1:
        raise ValueError(
            f"pool factor {pool_factor} leaves no time steps for slice length {slice_T}"
        )
    max_window = max(MCNN_SMOOTHING_WINDOWS)
    if slice_T < max_window:
        raise ValueError(
            f"mcnn needs slice length >= {max_window} for its smoothing branches, got {slice_T}"
        )

    def branch(transform: Node | None, t_branch: int) -> Sequential:
        window = max(1, t_branch // target)
        steps: list[Node] = [] if transform is None else [transform]
        steps += [
            Conv1d(256, filter_length, "same"), Act("sigmoid"),
            Pool1d("max", min(window, t_branch)), AlignTime(target),
        ]
        return Sequential(steps)

    branches = [branch(None, slice_T)]
    for k in MCNN_DOWNSAMPLE_FACTORS:
        branches.append(branch(Downsample(k), -(-slice_T // k)))
    for w in MCNN_SMOOTHING_WINDOWS:
        branches.append(branch(MovingAvg(w), slice_T - w + 1))

    net = Sequential([
        ConcatChannels(branches),
        Conv1d(256, filter_length, "same"), Act("sigmoid"), Pool1d("max", 2),
        Flatten(), Dense(256), Act("sigmoid"), Dense(K), Act("softmax"),
    ])
    spec = ModelSpec(
        "mcnn", slice_T, M, K, "cross_entropy", net,
        options={"filter_length": filter_length, "pool_factor": pool_factor},
    )
    spec.net.out_shape((slice_T, M))  # surfaces invalid geometry early
    return spec


def build_tlenet(slice_T: int, M: int, K: int) -> ModelSpec:
    if slice_T < 8:
        raise ValueError(f"tlenet needs slice length >= 8, got {slice_T}")
    net = Sequential([
        Conv1d(5, 5, "same"), Act("relu"), Pool1d("max", 2),
        Conv1d(20, 5, "same"), Act("relu"), Pool1d("max", 4),
        Flatten(), Dense(500), Act("relu"), Dense(K), Act("softmax"),
    ])
    return ModelSpec("tlenet", slice_T, M, K, "cross_entropy", net)


def build_mcdcnn(T: int, M: int, K: int) -> ModelSpec:
    if T < 4:
        raise ValueError(f"mcdcnn needs series length >= 4, got {T}")

    def branch() -> Sequential:
        return Sequential([
            Conv1d(8, 5, "same"), Act("relu"), Pool1d("max", 2),
            Conv1d(8, 5, "same"), Act("relu"), Pool1d("max", 2),
        ])

    net = Sequential([
        SplitDims([branch() for _ in range(M)]),
        Flatten(), Dense(732), Act("relu"), Dense(K), Act("softmax"),
    ])
    return ModelSpec("mcdcnn", T, M, K, "cross_entropy", net)


def build_timecnn(T: int, M: int, K: int) -> ModelSpec:
    if T < 7:
        raise ValueError(f"timecnn needs series length >= 7, got {T}")
    net = Sequential([
        Conv1d(6, 7, "valid"), Act("sigmoid"), Pool1d("avg", 3),
        Conv1d(12, 7, "valid"), Act("sigmoid"), Pool1d("avg", 3),
        Flatten(), Dense(K), Act("sigmoid"),
    ])
    spec = ModelSpec("timecnn", T, M, K, "mse", net)
    spec.net.out_shape((T, M))  # surfaces too-short series as invalid-argument
    return spec


_BUILDERS = {
    "mlp": build_mlp,
    "fcn": build_fcn,
    "resnet": build_resnet,
    "encoder": build_encoder,
    "tlenet": build_tlenet,
    "mcdcnn": build_mcdcnn,
    "timecnn": build_timecnn,
}


def build_model(architecture_id: str, T: int, M: int, K: int, **options) -> ModelSpec:
    if architecture_id == "mcnn":
        return build_mcnn(
            T, M, K, int(options["filter_length"]), int(options["pool_factor"])
        )
    if architecture_id not in _BUILDERS:
        raise ValueError(f"unknown architecture {architecture_id!r}")
    return _BUILDERS[architecture_id](T, M, K)


# ---------------------------------------------------------------------------
# forward / prediction

def forward_batch(spec: ModelSpec, params: dict, x: np.ndarray, mode: str,
                  rng: SplitMix64 | None = None, taps: dict | None = None):
    if x.ndim != 3 or x.shape[1] != spec.input_length or x.shape[2] != spec.input_dims:
        raise ShapeError(
            f"batch {x.shape} does not match model geometry "
            f"(T={spec.input_length}, M={spec.input_dims})"
        )
    caches: dict = {}
    y = spec.net.forward(x, params, "", mode, rng, caches, taps)
    return y, caches


def backward_batch(spec: ModelSpec, params: dict, caches: dict, gy: np.ndarray):
    grads: dict = {}
    gx = spec.net.backward(gy, params, "", caches, grads)
    return gx, grads


def forward(model: TrainedModel, batch: np.ndarray, mode: str = "infer",
            rng: SplitMix64 | None = None) -> np.ndarray:
    y, _ = forward_batch(model.spec, model.params, batch, mode, rng)
    return y


def gap_head(spec: ModelSpec) -> tuple[str, str]:
    """(gap prefix, head dense prefix) for GAP-headed architectures."""
    net = spec.net
    if (
        not isinstance(net, Sequential)
        or len(net.children) < 3
        or not isinstance(net.children[-3], Gap)
        or not isinstance(net.children[-2], Dense)
    ):
        raise UnsupportedArchitectureError(
            f"architecture {spec.architecture_id!r} has no GAP layer before its classifier"
        )
    n = len(net.children)
    return str(n - 3), str(n - 2)


def majority_vote(labels: np.ndarray, n_classes: int) -> int:
    """Most frequent label; ties resolve to the lowest class index."""
    counts = np.bincount(labels, minlength=n_classes)
    return int(counts.argmax())


def predict(model: TrainedModel, dataset: TimeSeriesDataset,
            batch_size: int = 256) -> np.ndarray:
    """Class indices for every series; sliced models vote over their slices.

    The window-sliced architectures must carry their slicing config (their
    training pool was sliced, so test series are sliced the same way);
    whole-series architectures must not.
    """
    spec = model.spec
    sliced_arch = spec.architecture_id in ("mcnn", "tlenet")
    if sliced_arch and spec.slicing is None:
        raise ValueError(f"{spec.architecture_id} predicts by majority vote; "
                         f"the model is missing its slicing config")
    if not sliced_arch and spec.slicing is not None:
        raise ValueError(f"{spec.architecture_id} takes whole series; "
                         f"slicing does not apply")
    if spec.slicing is None:
        out = np.empty(dataset.X.shape[0], dtype=np.int64)
        for lo in range(0, dataset.X.shape[0], batch_size):
            y = forward(model, dataset.X[lo : lo + batch_size])
            out[lo : lo + batch_size] = y.argmax(axis=1)
        return out
    length = spec.input_length
    stride = spec.slicing.stride
    T = dataset.X.shape[1]
    starts = slice_starts(T, length, stride)
    labels = np.empty(dataset.X.shape[0], dtype=np.int64)
    for i in range(dataset.X.shape[0]):
        slices = np.stack([dataset.X[i, s : s + length, :] for s in starts])
        y = forward(model, slices)
        labels[i] = majority_vote(y.argmax(axis=1), spec.classes)
    return labels


def accuracy(model: TrainedModel, dataset: TimeSeriesDataset) -> float:
    truth = dataset.Y.argmax(axis=1)
    return float((predict(model, dataset) == truth).mean())


# ---------------------------------------------------------------------------
# serialization: text manifest + little-endian float64 blob

def _flatten_layer_lines(desc, depth=0, lines=None):
    if lines is None:
        lines = []
    pad = "  " * depth
    if isinstance(desc, str):
        lines.append(pad + desc)
    elif isinstance(desc, list):
        for d in desc:
            _flatten_layer_lines(d, depth, lines)
    elif isinstance(desc, dict):
        for key, val in desc.items():
            if val is None:
                lines.append(pad + f"{key}: identity")
            else:
                lines.append(pad + f"{key}:")
                _flatten_layer_lines(val, depth + 1, lines)
    return lines


def save_model(model: TrainedModel, manifest_path) -> None:
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(manifest_path.suffix + ".bin")
    spec = model.spec
    lines = [
        "format: tsclab-model-v1",
        f"architecture_id: {spec.architecture_id}",
        f"input_length: {spec.input_length}",
        f"input_dims: {spec.input_dims}",
        f"classes: {spec.classes}",
        f"loss: {spec.loss}",
        f"seed: {model.seed}",
        f"epochs_run: {model.epochs_run}",
        f"best_epoch: {model.best_epoch}",
        f"blob: {blob_path.name}",
    ]
    for key in sorted(spec.options):
        lines.append(f"option: {key}={spec.options[key]!r}")
    if spec.slicing is not None:
        s = spec.slicing
        warps = ",".join(repr(f) for f in s.warp_factors)
        lines.append(f"slicing: fraction={s.fraction!r} stride={s.stride} warp={warps}")
    for name, value in model.params.items():
        dims = ",".join(str(d) for d in value.shape)
        lines.append(f"param: {name} [{dims}]")
    for row in _flatten_layer_lines(spec.describe()):
        lines.append(f"layer: {row}")
    manifest_path.write_text("\n".join(lines) + "\n")
    with open(blob_path, "wb") as fh:
        for value in model.params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_model(manifest_path) -> TrainedModel:
    manifest_path = Path(manifest_path)
    fields: dict[str, str] = {}
    options: dict = {}
    param_spec: list[tuple[str, tuple]] = []
    slicing = None
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, rest = line.partition(":")
        key, rest = key.strip(), rest.strip()
        if key == "param":
            name, _, dims = rest.partition(" ")
            shape = tuple(int(d) for d in dims.strip("[]").split(",") if d)
            param_spec.append((name, shape))
        elif key == "option":
            okey, _, oval = rest.partition("=")
            try:
                options[okey] = int(oval)
            except ValueError:
                options[okey] = float(oval)
        elif key == "slicing":
            parts = dict(p.split("=", 1) for p in rest.split())
            slicing = SlicingConfig(
                fraction=float(parts["fraction"]),
                stride=int(parts["stride"]),
                warp_factors=tuple(float(v) for v in parts["warp"].split(",")),
            )
        elif key == "layer":
            continue
        else:
            fields[key] = rest
    spec = build_model(
        fields["architecture_id"],
        int(fields["input_length"]),
        int(fields["input_dims"]),
        int(fields["classes"]),
        **options,
    )
    spec.slicing = slicing
    blob_path = manifest_path.parent / fields["blob"]
    raw = np.frombuffer(blob_path.read_bytes(), dtype="<f8")
    params: dict = {}
    at = 0
    for name, shape in param_spec:
        n = int(np.prod(shape)) if shape else 1
        params[name] = raw[at : at + n].reshape(shape).copy()
        at += n
    if at != raw.size:
        raise ValueError(f"blob size {raw.size} does not match manifest ({at} values)")
    return TrainedModel(
        spec,
        params,
        seed=int(fields.get("seed", 0)),
        epochs_run=int(fields.get("epochs_run", 0)),
        best_epoch=int(fields.get("best_epoch", 0)),
    )
