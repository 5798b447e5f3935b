"""Echo-state reservoir classifier with a per-timestep ridge readout.

A fixed sparse random recurrence projects every time step into the
reservoir space; a ridge regression trained on [1, input, state] rows
scores each step, and the softmaxed scores are averaged over the series
to produce its posterior.  The three reservoir hyperparameters plus the
ridge penalty are grid-searched on a stratified held-out split.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TimeSeriesDataset, split_train_val
from .errors import NumericError
from .tensor import SplitMix64

# fixed internal stream for the iteration start block; not user-visible
_POWER_SEED = 0xD1B54A32D192ED03


@dataclass
class ReservoirConfig:
    size: int = 64
    sparsity: float = 0.8
    spectral_radius: float = 0.9
    input_scale: float = 1.0
    ridge_lambda: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"reservoir size must be >= 2, got {self.size}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must be in [0, 1], got {self.sparsity}")
        if self.spectral_radius <= 0 or self.input_scale <= 0 or self.ridge_lambda <= 0:
            raise ValueError("spectral radius, input scale and ridge lambda must be positive")


@dataclass
class TwiesnModel:
    config: ReservoirConfig
    W_in: np.ndarray   # [N_r, M]
    W: np.ndarray      # [N_r, N_r]
    W_out: np.ndarray  # [K, 1 + M + N_r]


def default_grid(seed: int = 0) -> list[ReservoirConfig]:
    """Search grid spanning both sides of the echo-state boundary."""
    grid = []
    for size in (32, 64, 128, 256):
        for sparsity in (0.5, 0.8, 0.9):
            for rho in (0.25, 0.5, 0.9, 1.0):
                for lam in (0.01, 0.1, 1.0):
                    grid.append(ReservoirConfig(size, sparsity, rho, 1.0, lam, seed))
    return grid


def spectral_radius(W: np.ndarray, iterations: int = 200, tol: float = 1e-9,
                    block: int = 16) -> float:
    """Largest |eigenvalue| via block power iteration with Rayleigh-Ritz extraction.

    Random reservoir matrices routinely carry a complex-conjugate dominant
    pair, so the iterated subspace is kept ``block`` wide and the estimate
    is read off the projected matrix; a single vector would not converge.
    """
    n = W.shape[0]
    m = min(block, n)
    rng = SplitMix64(_POWER_SEED)
    V = (2.0 * rng.uniform(n * m) - 1.0).reshape(n, m)
    V, _ = np.linalg.qr(V)
    rho = 0.0
    rho_prev = np.inf
    for _ in range(iterations):
        Z = W @ V
        H = V.T @ Z
        rho = float(np.max(np.abs(np.linalg.eigvals(H))))
        if abs(rho - rho_prev) <= tol * max(1.0, rho):
            return rho
        rho_prev = rho
        Q, R = np.linalg.qr(Z)
        if np.min(np.abs(np.diag(R))) < 1e-300:
            return rho  # iterated block collapsed (zero/nilpotent matrix)
        V = Q
    return rho


def init_reservoir(config: ReservoirConfig, dims: int):
    """Draw (W_in, W); W is rescaled to the requested spectral radius.

    An all-zero draw (possible at extreme sparsity) is retried on a fresh
    seed substream up to 5 times before raising.
    """
    base = SplitMix64(config.seed)
    n = config.size
    for _ in range(5):
        stream = base.split()
        W_in = (2.0 * stream.uniform(n * dims) - 1.0).reshape(n, dims) * config.input_scale
        keep = stream.uniform(n * n).reshape(n, n) >= config.sparsity
        values = (2.0 * stream.uniform(n * n) - 1.0).reshape(n, n)
        W = np.where(keep, values, 0.0)
        rho = spectral_radius(W)
        if rho > 1e-12:
            return W_in, W * (config.spectral_radius / rho)
    raise NumericError(
        f"reservoir draw has zero spectral radius after 5 attempts "
        f"(size={n}, sparsity={config.sparsity})"
    )


def reservoir_states_batch(W_in: np.ndarray, W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """States I(t) = tanh(W_in X(t) + W I(t-1)) for a [N, T, M] batch; I(0) = 0."""
    n_series, T, _ = X.shape
    n_r = W.shape[0]
    states = np.empty((n_series, T, n_r))
    current = np.zeros((n_series, n_r))
    for t in range(T):
        current = np.tanh(X[:, t, :] @ W_in.T + current @ W.T)
        states[:, t, :] = current
    return states


def reservoir_states(W_in: np.ndarray, W: np.ndarray, series: np.ndarray) -> np.ndarray:
    """[T, M] -> [T, N_r] state trajectory from the zero initial state."""
    return reservoir_states_batch(W_in, W, series[None, :, :])[0]


def fit_ridge(features: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form ridge readout: W_out^T = (A^T A + lam I)^-1 A^T Y.

    Solved with a Cholesky factorization of the regularized Gram matrix;
    the intercept column is regularized like every other feature.
    """
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError(f"features must be [n, F] with n >= 1, got {features.shape}")
    if lam <= 0:
        raise ValueError(f"ridge lambda must be positive, got {lam}")
    F = features.shape[1]
    gram = features.T @ features + lam * np.eye(F)
    rhs = features.T @ targets
    chol = np.linalg.cholesky(gram)
    half = np.linalg.solve(chol, rhs)
    w_t = np.linalg.solve(chol.T, half)
    return w_t.T


def _design(X: np.ndarray, states: np.ndarray) -> np.ndarray:
    # one row per (series, timestep): [1, X(t), I(t)]
    n_series, T, m = X.shape
    ones = np.ones((n_series, T, 1))
    return np.concatenate([ones, X, states], axis=2).reshape(n_series * T, 1 + m + states.shape[2])


def twiesn_train_single(config: ReservoirConfig, data: TimeSeriesDataset) -> TwiesnModel:
    """Fit the readout for one configuration on the full given data."""
    W_in, W = init_reservoir(config, data.dims)
    states = reservoir_states_batch(W_in, W, data.X)
    rows = _design(data.X, states)
    targets = np.repeat(data.Y, data.length, axis=0)
    W_out = fit_ridge(rows, targets, config.ridge_lambda)
    return TwiesnModel(config, W_in, W, W_out)


def twiesn_posteriors(model: TwiesnModel, X: np.ndarray) -> np.ndarray:
    """Averaged per-step softmax posterior for a [N, T, M] batch."""
    states = reservoir_states_batch(model.W_in, model.W, X)
    n_series, T, _ = X.shape
    rows = _design(X, states)
    scores = rows @ model.W_out.T
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    posterior = e / e.sum(axis=1, keepdims=True)
    return posterior.reshape(n_series, T, -1).mean(axis=1)


def twiesn_predict(model: TwiesnModel, series: np.ndarray):
    """(label, averaged posterior) for one [T, M] series; ties pick the lowest index."""
    posterior = twiesn_posteriors(model, series[None, :, :])[0]
    return int(posterior.argmax()), posterior


def twiesn_predict_dataset(model: TwiesnModel, dataset: TimeSeriesDataset) -> np.ndarray:
    return twiesn_posteriors(model, dataset.X).argmax(axis=1)


def twiesn_accuracy(model: TwiesnModel, dataset: TimeSeriesDataset) -> float:
    return float((twiesn_predict_dataset(model, dataset) == dataset.labels()).mean())


def twiesn_fit(data: TimeSeriesDataset, grid: list[ReservoirConfig] | None = None,
               split_seed: int | None = None) -> TwiesnModel:
    """Grid-search on a stratified 20% held-out split, then refit on all data.

    Ties keep the first grid entry.  A single-entry grid skips straight to
    the refit, which is then an ordinary direct fit.
    """
    if grid is None:
        grid = default_grid()
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len(grid) == 1:
        return twiesn_train_single(grid[0], data)
    if split_seed is None:
        split_seed = grid[0].seed
    fit_part, val_part = split_train_val(data, 0.2, split_seed)
    best = None
    best_acc = -1.0
    for config in grid:
        model = twiesn_train_single(config, fit_part)
        acc = twiesn_accuracy(model, val_part)
        if acc > best_acc:
            best_acc = acc
            best = config
    return twiesn_train_single(best, data)


# ---------------------------------------------------------------------------
# serialization (same manifest + little-endian float64 blob scheme as models)

def save_twiesn(model: TwiesnModel, manifest_path) -> None:
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(manifest_path.suffix + ".bin")
    c = model.config
    lines = [
        "format: tsclab-twiesn-v1",
        "architecture_id: twiesn",
        f"size: {c.size}",
        f"sparsity: {c.sparsity!r}",
        f"spectral_radius: {c.spectral_radius!r}",
        f"input_scale: {c.input_scale!r}",
        f"ridge_lambda: {c.ridge_lambda!r}",
        f"seed: {c.seed}",
        f"blob: {blob_path.name}",
    ]
    tensors = [("W_in", model.W_in), ("W", model.W), ("W_out", model.W_out)]
    for name, value in tensors:
        dims = ",".join(str(d) for d in value.shape)
        lines.append(f"param: {name} [{dims}]")
    manifest_path.write_text("\n".join(lines) + "\n")
    with open(blob_path, "wb") as fh:
        for _, value in tensors:
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_twiesn(manifest_path) -> TwiesnModel:
    manifest_path = Path(manifest_path)
    fields: dict[str, str] = {}
    param_spec: list[tuple[str, tuple]] = []
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, rest = line.partition(":")
        key, rest = key.strip(), rest.strip()
        if key == "param":
            name, _, dims = rest.partition(" ")
            param_spec.append((name, tuple(int(d) for d in dims.strip("[]").split(","))))
        else:
            fields[key] = rest
    config = ReservoirConfig(
        size=int(fields["size"]),
        sparsity=float(fields["sparsity"]),
        spectral_radius=float(fields["spectral_radius"]),
        input_scale=float(fields["input_scale"]),
        ridge_lambda=float(fields["ridge_lambda"]),
        seed=int(fields["seed"]),
    )
    raw = np.frombuffer((manifest_path.parent / fields["blob"]).read_bytes(), dtype="<f8")
    tensors = {}
    at = 0
    for name, shape in param_spec:
        n = int(np.prod(shape))
        tensors[name] = raw[at : at + n].reshape(shape).copy()
        at += n
    return TwiesnModel(config, tensors["W_in"], tensors["W"], tensors["W_out"])
