"""Optimizers, learning-rate schedules, and the checkpointing training loop.

Per-architecture defaults mirror the published optimization table: the
algorithm, epoch count, batch size, initial learning rate, decay, and the
checkpoint reference set (train loss or a stratified validation split).
The parameters of the epoch with the lowest reference loss are returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeriesDataset, split_train_val
from .errors import ShapeError, TrainingDivergenceError
from .layers import LOSSES
from .models import ModelSpec, TrainedModel, backward_batch, forward_batch, init_model, trainable
from .tensor import SplitMix64


@dataclass
class PlateauConfig:
    factor: float = 0.5
    patience: int = 50
    min_lr: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"plateau factor must be in (0, 1), got {self.factor}")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    loss: str = "cross_entropy"
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.001
    decay: float = 0.0
    validation: str = "train"  # "train" or "split"
    split_fraction: float = 0.0
    plateau: PlateauConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.decay < 0:
            raise ValueError(f"decay must be non-negative, got {self.decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.validation not in ("train", "split"):
            raise ValueError(f"validation must be 'train' or 'split', got {self.validation}")


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)  # reference loss per epoch
    lrs: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based


def default_config(architecture_id: str, seed: int = 0) -> TrainConfig:
    """Published optimization hyperparameters for the eight gradient-trained nets."""
    plateau = PlateauConfig()
    table = {
        "mlp": TrainConfig("adadelta", "cross_entropy", 5000, 16, 1.0, 0.0,
                           "train", 0.0, plateau, seed),
        "fcn": TrainConfig("adam", "cross_entropy", 2000, 16, 0.001, 0.0,
                           "train", 0.0, plateau, seed),
        "resnet": TrainConfig("adam", "cross_entropy", 1500, 16, 0.001, 0.0,
                              "train", 0.0, plateau, seed),
        "encoder": TrainConfig("adam", "cross_entropy", 100, 12, 1e-5, 0.0,
                               "train", 0.0, None, seed),
        "mcnn": TrainConfig("adam", "cross_entropy", 200, 256, 0.1, 0.0,
                            "split", 0.2, None, seed),
        "tlenet": TrainConfig("adam", "cross_entropy", 1000, 256, 0.01, 0.005,
                              "train", 0.0, None, seed),
        "mcdcnn": TrainConfig("sgd", "cross_entropy", 120, 16, 0.01, 0.0005,
                              "split", 0.33, None, seed),
        "timecnn": TrainConfig("adam", "mse", 2000, 16, 0.001, 0.0,
                               "train", 0.0, None, seed),
    }
    if architecture_id not in table:
        raise ValueError(f"no default optimization config for {architecture_id!r}")
    return table[architecture_id]


# ---------------------------------------------------------------------------
# optimizers

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ADADELTA_RHO = 0.95
ADADELTA_EPS = 1e-8


class Optimizer:
    """Shared NaN guard; concrete rules fill in ``_update``."""

    def __init__(self):
        self.state: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            if not trainable(name):
                continue
            if np.isnan(np.asarray(g)).any():
                raise TrainingDivergenceError(f"NaN gradient in layer parameter {name!r}")
        self._update(params, grads, lr)

    def _update(self, params, grads, lr):
        raise NotImplementedError


class Sgd(Optimizer):
    def _update(self, params, grads, lr):
        for name, g in grads.items():
            if trainable(name):
                params[name] = params[name] - lr * g


class Adam(Optimizer):
    def __init__(self):
        super().__init__()
        self.t = 0

    def _update(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for name, g in grads.items():
            if not trainable(name):
                continue
            m, v = self.state.get(name, (0.0, 0.0))
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
            self.state[name] = (m, v)
            params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class AdaDelta(Optimizer):
    def _update(self, params, grads, lr):
        for name, g in grads.items():
            if not trainable(name):
                continue
            eg2, edx2 = self.state.get(name, (0.0, 0.0))
            eg2 = ADADELTA_RHO * eg2 + (1.0 - ADADELTA_RHO) * (g * g)
            dx = -np.sqrt(edx2 + ADADELTA_EPS) / np.sqrt(eg2 + ADADELTA_EPS) * g
            edx2 = ADADELTA_RHO * edx2 + (1.0 - ADADELTA_RHO) * (dx * dx)
            self.state[name] = (eg2, edx2)
            params[name] = params[name] + lr * dx


_OPTIMIZERS = {"sgd": Sgd, "adam": Adam, "adadelta": AdaDelta}


def make_optimizer(kind: str) -> Optimizer:
    if kind not in _OPTIMIZERS:
        raise ValueError(f"unknown optimizer {kind!r}")
    return _OPTIMIZERS[kind]()


def optimizer_step(params: dict, grads: dict, optimizer: Optimizer, lr: float) -> None:
    optimizer.step(params, grads, lr)


# ---------------------------------------------------------------------------
# learning-rate schedule

class LrSchedule:
    """Time decay lr0/(1 + decay*updates), composed with plateau halving.

    The plateau rule multiplies the base rate by ``factor`` whenever the
    reference loss has not improved for ``patience`` consecutive epochs,
    never dropping below ``min_lr``.
    """

    def __init__(self, base_lr: float, decay: float = 0.0,
                 plateau: PlateauConfig | None = None):
        self.base_lr = base_lr
        self.decay = decay
        self.plateau = plateau
        self.plateau_lr = base_lr
        self.updates = 0
        self.best = math.inf
        self.wait = 0

    def current(self) -> float:
        return self.plateau_lr / (1.0 + self.decay * self.updates)

    def after_step(self) -> None:
        self.updates += 1

    def after_epoch(self, reference_loss: float) -> None:
        if self.plateau is None:
            return
        if reference_loss < self.best:
            self.best = reference_loss
            self.wait = 0
            return
        self.wait += 1
        if self.wait >= self.plateau.patience:
            self.plateau_lr = max(self.plateau.min_lr, self.plateau_lr * self.plateau.factor)
            self.wait = 0


# ---------------------------------------------------------------------------
# training loop

def evaluate_loss(spec: ModelSpec, params: dict, dataset: TimeSeriesDataset,
                  loss_kind: str, batch_size: int = 256) -> float:
    """Mean loss over a dataset in infer mode."""
    loss_fn = LOSSES[loss_kind]
    total = 0.0
    for lo in range(0, dataset.n, batch_size):
        x = dataset.X[lo : lo + batch_size]
        y = dataset.Y[lo : lo + batch_size]
        pred, _ = forward_batch(spec, params, x, "infer")
        loss, _ = loss_fn(pred, y)
        total += loss * x.shape[0]
    return float(total / dataset.n)


def train(spec: ModelSpec, data: TimeSeriesDataset, config: TrainConfig,
          log_fn=None):
    """Train ``spec`` on ``data``; returns the best-reference-loss checkpoint.

    Fully deterministic for a fixed config seed: Glorot initialization,
    epoch shuffles, and dropout masks all consume one SplitMix64 stream.
    ``log_fn``, when given, receives one ``"epoch,loss,lr"`` line per epoch.
    """
    if data.length != spec.input_length or data.dims != spec.input_dims:
        raise ShapeError(
            f"dataset geometry (T={data.length}, M={data.dims}) does not match "
            f"model (T={spec.input_length}, M={spec.input_dims})"
        )
    if data.n_classes != spec.classes:
        raise ShapeError(f"dataset has {data.n_classes} classes, model wants {spec.classes}")

    rng = SplitMix64(config.seed)
    params = init_model(spec, rng)

    if config.validation == "split":
        train_set, ref_set = split_train_val(data, config.split_fraction, config.seed)
        if ref_set.n == 0 or train_set.n == 0:
            raise ValueError("validation split produced an empty subset")
    else:
        train_set = ref_set = data

    loss_fn = LOSSES[config.loss]
    optimizer = make_optimizer(config.optimizer)
    sched = LrSchedule(config.learning_rate, config.decay, config.plateau)
    history = TrainHistory()
    best_loss = math.inf
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = 0

    order = list(range(train_set.n))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            x = train_set.X[batch]
            y = train_set.Y[batch]
            pred, caches = forward_batch(spec, params, x, "train", rng)
            _, gpred = loss_fn(pred, y)
            _, grads = backward_batch(spec, params, caches, gpred)
            optimizer.step(params, grads, sched.current())
            sched.after_step()

        ref_loss = evaluate_loss(spec, params, ref_set, config.loss)
        if math.isnan(ref_loss):
            raise TrainingDivergenceError(f"reference loss became NaN at epoch {epoch}")
        history.losses.append(ref_loss)
        history.lrs.append(sched.current())
        if log_fn is not None:
            log_fn(f"{epoch},{ref_loss!r},{sched.current()!r}")
        if ref_loss < best_loss:
            best_loss = ref_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        sched.after_epoch(ref_loss)

    history.best_epoch = best_epoch
    model = TrainedModel(spec, best_params, seed=config.seed,
                         epochs_run=config.epochs, best_epoch=best_epoch)
    return model, history
