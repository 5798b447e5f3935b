"""Class Activation Maps and metric MDS of the pre-classifier features.

Both tools need a GAP-headed network (the convolutional feature map is
averaged over time and fed straight to the softmax layer), so they are
restricted to architectures with that head.  The CAM of class ``c`` is
the softmax-weight-combined final feature map over time; its time
average plus the class bias reproduces the class logit exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import TimeSeriesDataset
from .errors import NumericError
from .models import TrainedModel, forward_batch, gap_head


@dataclass
class CamOutput:
    values: np.ndarray       # [T] raw CAM_c(t)
    normalized: np.ndarray   # [T] min-max rescaled to [0, 1] for rendering
    logit: float
    bias: float
    class_weights: np.ndarray  # [C_last] softmax weights of the class
    activations: np.ndarray    # [T, C_last] final-convolution output


@dataclass
class MdsEmbedding:
    points: np.ndarray       # [N, 2]
    distances: np.ndarray    # [N, N] input distances
    stress: float
    iterations: int
    stress_trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# GAP features and CAM

def _final_feature_map(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    gap_prefix, _ = gap_head(model.spec)
    taps: dict = {}
    forward_batch(model.spec, model.params, x, "infer", taps=taps)
    return taps[gap_prefix]


def gap_features(model: TrainedModel, dataset: TimeSeriesDataset,
                 batch_size: int = 256) -> np.ndarray:
    """[N, C_last] time-averaged final feature map (the softmax layer's input)."""
    chunks = []
    for lo in range(0, dataset.n, batch_size):
        a = _final_feature_map(model, dataset.X[lo : lo + batch_size])
        chunks.append(a.mean(axis=1))
    return np.concatenate(chunks, axis=0)


def compute_cam(model: TrainedModel, series: np.ndarray, class_index: int) -> CamOutput:
    """Per-timestamp class evidence for one [T, M] series."""
    _, dense_prefix = gap_head(model.spec)
    if not 0 <= class_index < model.spec.classes:
        raise ValueError(
            f"class index {class_index} out of range for {model.spec.classes} classes"
        )
    a = _final_feature_map(model, series[None, :, :])[0]  # [T, C_last]
    w = model.params[f"{dense_prefix}.w"][:, class_index]
    bias = float(model.params[f"{dense_prefix}.b"][class_index])
    cam = a @ w
    lo, hi = float(cam.min()), float(cam.max())
    normalized = (cam - lo) / (hi - lo) if hi > lo else np.zeros_like(cam)
    logit = float(a.mean(axis=0) @ w + bias)
    return CamOutput(cam, normalized, logit, bias, w.copy(), a)


# ---------------------------------------------------------------------------
# distances and MDS

def distance_matrix(features: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances; symmetric with a zero diagonal."""
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError(f"need at least 2 feature rows, got shape {features.shape}")
    diff = features[:, None, :] - features[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(d, 0.0)
    return d


def _check_distance_matrix(d: np.ndarray) -> None:
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    if not np.allclose(d, d.T, atol=1e-9):
        raise ValueError("distance matrix must be symmetric")
    if np.abs(np.diag(d)).max() > 1e-12:
        raise ValueError("distance matrix must have a zero diagonal")
    if d.min() < 0:
        raise ValueError("distances must be non-negative")


def _top_eigenpair(B: np.ndarray, iterations: int = 1000, tol: float = 1e-13):
    n = B.shape[0]
    v = np.arange(1.0, n + 1.0)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(iterations):
        w = B @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        new_value = float(v @ w)
        v = w / norm
        if abs(new_value - value) <= tol * max(1.0, abs(new_value)):
            value = new_value
            break
        value = new_value
    return value, v


def _classical_init(d: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    d2 = d * d
    # double centering: B = -1/2 J D^2 J
    row = d2.mean(axis=0)
    grand = d2.mean()
    B = -0.5 * (d2 - row[None, :] - row[:, None] + grand)
    lam1, v1 = _top_eigenpair(B)
    B2 = B - lam1 * np.outer(v1, v1)
    lam2, v2 = _top_eigenpair(B2)
    x1 = v1 * np.sqrt(max(lam1, 0.0))
    x2 = v2 * np.sqrt(max(lam2, 0.0))
    return np.stack([x1, x2], axis=1)


def stress_value(d: np.ndarray, points: np.ndarray) -> float:
    """Normalized residual stress: sqrt(sum (d_ij - e_ij)^2 / sum d_ij^2)."""
    e = distance_matrix(points)
    return float(np.sqrt(((d - e) ** 2).sum() / (d * d).sum()))


def mds_embed(d: np.ndarray, max_iterations: int = 300,
              tol: float = 1e-6) -> MdsEmbedding:
    """Metric MDS into 2-D: classical (eigen) start refined by SMACOF.

    The Guttman transform never increases the residual stress, so the
    recorded stress trace is non-increasing.  Stops when the relative
    stress improvement drops below ``tol``.
    """
    d = np.asarray(d, dtype=np.float64)
    _check_distance_matrix(d)
    if d.max() == 0.0:
        raise NumericError("degenerate all-zero distance matrix")
    n = d.shape[0]
    x = _classical_init(d)
    trace = [stress_value(d, x)]
    iterations = 0
    for _ in range(max_iterations):
        e = distance_matrix(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(e > 0.0, d / np.where(e > 0.0, e, 1.0), 0.0)
        b = -ratio
        np.fill_diagonal(b, 0.0)
        np.fill_diagonal(b, -b.sum(axis=1))
        x = (b @ x) / n
        iterations += 1
        trace.append(stress_value(d, x))
        if trace[-2] - trace[-1] < tol * max(trace[-2], 1e-300):
            break
    return MdsEmbedding(x, d, trace[-1], iterations, trace)


# ---------------------------------------------------------------------------
# exports

def _ramp_color(t: float) -> str:
    r = int(round(255 * min(max(t, 0.0), 1.0)))
    return f"#{r:02x}00{255 - r:02x}"


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def export_cam_svg(series: np.ndarray, cam_normalized: np.ndarray,
                   width: float = 800.0, height: float = 300.0) -> str:
    """Series polyline with segments colored by CAM weight (blue: 0, red: 1)."""
    y = np.asarray(series, dtype=np.float64).reshape(-1)
    if y.shape[0] != cam_normalized.shape[0]:
        raise ValueError(
            f"series length {y.shape[0]} != cam length {cam_normalized.shape[0]}"
        )
    T = y.shape[0]
    margin = 30.0
    lo, hi = float(y.min()), float(y.max())
    span = hi - lo if hi > lo else 1.0

    def px(t: int) -> float:
        return margin + t / max(T - 1, 1) * (width - 2 * margin)

    def py(v: float) -> float:
        return height - margin - (v - lo) / span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    ]
    for t in range(T - 1):
        parts.append(
            f'<line x1="{_fmt(px(t))}" y1="{_fmt(py(y[t]))}" '
            f'x2="{_fmt(px(t + 1))}" y2="{_fmt(py(y[t + 1]))}" '
            f'stroke="{_ramp_color(float(cam_normalized[t]))}" stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


_CLASS_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def export_mds_svg(embedding: MdsEmbedding, labels: np.ndarray,
                   size: float = 600.0) -> str:
    """Scatter of the embedding, one fixed color per class, with a legend."""
    pts = embedding.points
    labels = np.asarray(labels)
    margin = 40.0
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)

    def px(p) -> tuple[float, float]:
        sx = margin + (p[0] - lo[0]) / span[0] * (size - 2 * margin)
        sy = size - margin - (p[1] - lo[1]) / span[1] * (size - 2 * margin)
        return sx, sy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(size + 140)}" '
        f'height="{_fmt(size)}" viewBox="0 0 {_fmt(size + 140)} {_fmt(size)}">'
    ]
    for i in range(pts.shape[0]):
        x, y = px(pts[i])
        color = _CLASS_PALETTE[int(labels[i]) % len(_CLASS_PALETTE)]
        parts.append(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="4" fill="{color}" '
            f'fill-opacity="0.8"/>'
        )
    for row, cls in enumerate(sorted({int(v) for v in labels})):
        color = _CLASS_PALETTE[cls % len(_CLASS_PALETTE)]
        ly = 30.0 + 20.0 * row
        parts.append(
            f'<circle cx="{_fmt(size + 20)}" cy="{_fmt(ly)}" r="5" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{_fmt(size + 32)}" y="{_fmt(ly + 4)}" font-size="12" '
            f'font-family="sans-serif">class {cls}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cam_csv(cam: CamOutput) -> str:
    lines = ["t,value"]
    lines += [f"{t},{float(v)!r}" for t, v in enumerate(cam.values)]
    return "\n".join(lines) + "\n"


def mds_csv(embedding: MdsEmbedding, labels: np.ndarray) -> str:
    lines = ["x,y,label"]
    for i in range(embedding.points.shape[0]):
        x, y = embedding.points[i]
        lines.append(f"{float(x)!r},{float(y)!r},{int(labels[i])}")
    return "\n".join(lines) + "\n"
