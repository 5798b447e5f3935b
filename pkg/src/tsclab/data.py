"""Dataset ingestion, preprocessing, and the slicing/warping augmentations.

Two on-disk formats are understood:

* UCR text: one series per line, ``<label><delim><v1><delim>...<vT>``,
  delimiter comma or tab (auto-detected from the first line).
* Long-format CSV for multivariate data with header
  ``series_id,dimension,timestamp,value,label``; rows may arrive in any
  order but every (series, dimension) must cover timestamps 0..T_i-1.

Values are parsed with locale-independent decimal points.  No
z-normalization is applied anywhere: UCR series come normalized, and
multivariate series are used as-is.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, IntegrityError, VocabularyError
from .tensor import SplitMix64

MTS_HEADER = "series_id,dimension,timestamp,value,label"


@dataclass
class DatasetMeta:
    name: str = "dataset"
    theme: str | None = None
    length_range: tuple[int, int] | None = None


@dataclass
class TimeSeriesDataset:
    X: np.ndarray  # [N, T, M]
    Y: np.ndarray  # [N, K] one-hot
    vocabulary: tuple  # original labels, sorted ascending; index = class id
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self):
        if self.X.ndim != 3 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(
                f"inconsistent dataset arrays X{self.X.shape} Y{self.Y.shape}"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def length(self) -> int:
        return self.X.shape[1]

    @property
    def dims(self) -> int:
        return self.X.shape[2]

    @property
    def n_classes(self) -> int:
        return self.Y.shape[1]

    def labels(self) -> np.ndarray:
        return self.Y.argmax(axis=1)

    def take(self, indices) -> "TimeSeriesDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return TimeSeriesDataset(self.X[idx], self.Y[idx], self.vocabulary, self.meta)


def one_hot(labels, vocabulary) -> np.ndarray:
    """[N, K] rows with a single 1 at each label's sorted-vocabulary index."""
    index = {label: i for i, label in enumerate(vocabulary)}
    out = np.zeros((len(labels), len(vocabulary)))
    for row, label in enumerate(labels):
        if label not in index:
            raise VocabularyError(f"label {label!r} not in vocabulary {list(vocabulary)!r}")
        out[row, index[label]] = 1.0
    return out


def _parse_label(token: str):
    try:
        return float(token)
    except ValueError:
        return token


def _ucr_rows(path) -> list[tuple[float, list[float]]]:
    path = Path(path)
    text = path.read_text()
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" in line:
            parts = line.split("\t")
        elif "," in line:
            parts = line.split(",")
        else:
            parts = line.split()
        try:
            values = [float(p) for p in parts if p != ""]
        except ValueError as exc:
            raise DataFormatError(f"{path.name}:{lineno}: {exc}") from None
        if len(values) < 2:
            raise DataFormatError(f"{path.name}:{lineno}: need a label and at least one value")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataFormatError(
                f"{path.name}:{lineno}: ragged row ({len(values)} fields, expected {width})"
            )
        rows.append((values[0], values[1:]))
    if not rows:
        raise DataFormatError(f"{path.name}: empty file")
    return rows


def dataset_name_from_path(path) -> str:
    stem = Path(path).stem
    for suffix in ("_TRAIN", "_TEST", "_train", "_test"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def _ucr_dataset(rows, vocabulary, name) -> TimeSeriesDataset:
    X = np.asarray([values for _, values in rows])[:, :, None]
    Y = one_hot([label for label, _ in rows], vocabulary)
    T = X.shape[1]
    return TimeSeriesDataset(X, Y, vocabulary, DatasetMeta(name, length_range=(T, T)))


def load_ucr_file(path, vocabulary: tuple | None = None) -> TimeSeriesDataset:
    """A single UCR-format file; the vocabulary defaults to its own labels."""
    rows = _ucr_rows(path)
    if vocabulary is None:
        vocabulary = tuple(sorted({label for label, _ in rows}))
    return _ucr_dataset(rows, vocabulary, dataset_name_from_path(path))


def load_ucr(train_path, test_path) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Univariate archive pair; the label vocabulary is fixed by the train split."""
    train = load_ucr_file(train_path)
    test_rows = _ucr_rows(test_path)
    for label, _ in test_rows:
        if label not in train.vocabulary:
            raise VocabularyError(
                f"test label {label!r} absent from train vocabulary "
                f"{list(train.vocabulary)!r}"
            )
    test = _ucr_dataset(test_rows, train.vocabulary, dataset_name_from_path(test_path))
    return train, test


# ---------------------------------------------------------------------------
# long-format multivariate files

def _read_long_records(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MTS_HEADER:
        raise DataFormatError(f"{path.name}: expected header {MTS_HEADER!r}")
    series_order: list[str] = []
    series: dict[str, dict] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataFormatError(f"{path.name}:{lineno}: expected 5 fields, got {len(parts)}")
        sid, dim_tok, t_tok, val_tok, label_tok = (p.strip() for p in parts)
        try:
            dim = int(dim_tok)
            t = int(t_tok)
            value = float(val_tok)
        except ValueError as exc:
            raise DataFormatError(f"{path.name}:{lineno}: {exc}") from None
        label = _parse_label(label_tok)
        if sid not in series:
            series[sid] = {"label": label, "dims": {}}
            series_order.append(sid)
        rec = series[sid]
        if rec["label"] != label:
            raise IntegrityError(
                f"{path.name}:{lineno}: series {sid!r} has conflicting labels "
                f"{rec['label']!r} and {label!r}"
            )
        cells = rec["dims"].setdefault(dim, {})
        if t in cells:
            raise IntegrityError(
                f"{path.name}:{lineno}: duplicate entry for series {sid!r} dim {dim} t {t}"
            )
        cells[t] = value
    if not series_order:
        raise DataFormatError(f"{path.name}: no data rows")

    all_dims = sorted({d for rec in series.values() for d in rec["dims"]})
    raws = []
    labels = []
    for sid in series_order:
        rec = series[sid]
        lengths = set()
        for dim in all_dims:
            if dim not in rec["dims"]:
                raise IntegrityError(f"series {sid!r} is missing dimension {dim}")
            ts = rec["dims"][dim]
            T_i = len(ts)
            if sorted(ts) != list(range(T_i)):
                raise IntegrityError(
                    f"series {sid!r} dim {dim}: timestamps not contiguous from 0"
                )
            lengths.add(T_i)
        if len(lengths) != 1:
            raise IntegrityError(f"series {sid!r}: dimensions disagree on length")
        T_i = lengths.pop()
        arr = np.empty((T_i, len(all_dims)))
        for j, dim in enumerate(all_dims):
            cells = rec["dims"][dim]
            arr[:, j] = [cells[t] for t in range(T_i)]
        raws.append(arr)
        labels.append(rec["label"])
    return raws, labels


def load_mts_long(path, target_length: int | None = None,
                  vocabulary: tuple | None = None) -> TimeSeriesDataset:
    """Load a long-format file; series are linearly interpolated to a shared length.

    ``target_length`` defaults to the longest series in the file.
    """
    raws, labels = _read_long_records(path)
    lengths = [r.shape[0] for r in raws]
    target = max(lengths) if target_length is None else int(target_length)
    X = np.stack([linear_interpolate(r, target) if r.shape[0] != target else r
                  for r in raws])
    if vocabulary is None:
        vocabulary = tuple(sorted(set(labels)))
    Y = one_hot(labels, vocabulary)
    meta = DatasetMeta(dataset_name_from_path(path),
                       length_range=(min(lengths), max(lengths)))
    return TimeSeriesDataset(X, Y, vocabulary, meta)


def load_mts_long_pair(train_path, test_path):
    """Train/test pair sharing the interpolation target and the label vocabulary."""
    train_raws, train_labels = _read_long_records(train_path)
    test_raws, _ = _read_long_records(test_path)
    target = max(r.shape[0] for r in train_raws + test_raws)
    vocabulary = tuple(sorted(set(train_labels)))
    train = load_mts_long(train_path, target, vocabulary)
    test = load_mts_long(test_path, target, vocabulary)
    return train, test


def save_mts_long(dataset: TimeSeriesDataset, path) -> None:
    """Serialize an equal-length dataset back to the long format."""
    lines = [MTS_HEADER]
    labels = dataset.labels()
    for i in range(dataset.n):
        label = dataset.vocabulary[labels[i]]
        label_tok = repr(label) if isinstance(label, float) else str(label)
        for dim in range(dataset.dims):
            for t in range(dataset.length):
                lines.append(f"{i},{dim},{t},{float(dataset.X[i, t, dim])!r},{label_tok}")
    Path(path).write_text("\n".join(lines) + "\n")


def detect_format(path) -> str:
    with open(path) as fh:
        first = fh.readline().strip()
    return "long" if first == MTS_HEADER else "ucr"


def load_pair(train_path, test_path):
    """Auto-detect the file format and load a train/test pair."""
    if detect_format(train_path) == "long":
        return load_mts_long_pair(train_path, test_path)
    return load_ucr(train_path, test_path)


def load_single(path) -> TimeSeriesDataset:
    """Auto-detect the file format and load one standalone file."""
    if detect_format(path) == "long":
        return load_mts_long(path)
    return load_ucr_file(path)


# ---------------------------------------------------------------------------
# resampling

def _resample(series: np.ndarray, target_T: int) -> np.ndarray:
    T = series.shape[0]
    positions = np.linspace(0.0, T - 1.0, target_T)
    grid = np.arange(T, dtype=np.float64)
    return np.stack([np.interp(positions, grid, series[:, m])
                     for m in range(series.shape[1])], axis=1)


def linear_interpolate(series: np.ndarray, target_T: int) -> np.ndarray:
    """Stretch [T_i, M] to [target_T, M] by piecewise-linear resampling."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError(f"series must be [T, M], got shape {series.shape}")
    if series.shape[0] < 2:
        raise ValueError("interpolation needs at least 2 points")
    if target_T < series.shape[0]:
        raise ValueError(
            f"target length {target_T} shorter than series length {series.shape[0]}"
        )
    return _resample(series, target_T)


def window_warp(series: np.ndarray, factor: float) -> np.ndarray:
    """Dilate (factor > 1) or squeeze (factor < 1) the time axis by resampling."""
    series = np.asarray(series, dtype=np.float64)
    if factor <= 0:
        raise ValueError(f"warp factor must be positive, got {factor}")
    target = int(math.floor(factor * series.shape[0] + 0.5))
    if target < 2:
        raise ValueError(f"warp factor {factor} leaves fewer than 2 points")
    return _resample(series, target)


# ---------------------------------------------------------------------------
# window slicing

@dataclass
class SlicingConfig:
    fraction: float = 0.9
    stride: int = 1
    warp_factors: tuple = (1.0,)

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"slice fraction must be in (0, 1], got {self.fraction}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


def default_slicing(T: int, warp_factors=(1.0,)) -> SlicingConfig:
    """fraction 0.9 with stride ceil(T/10)."""
    return SlicingConfig(0.9, max(1, -(-T // 10)), tuple(warp_factors))


def slice_starts(T: int, length: int, stride: int) -> list[int]:
    """Start offsets 0, stride, 2*stride, ... plus a final slice ending at T."""
    if length > T:
        raise ValueError(f"slice length {length} exceeds series length {T}")
    starts = list(range(0, T - length + 1, stride))
    if starts[-1] != T - length:
        starts.append(T - length)
    return starts


def window_slice(dataset: TimeSeriesDataset, config: SlicingConfig,
                 length: int | None = None):
    """Fixed-length subsequences of every series, each inheriting its parent label.

    Returns the sliced dataset and the slice -> parent index map.
    """
    T = dataset.length
    L = int(math.ceil(config.fraction * T)) if length is None else int(length)
    starts = slice_starts(T, L, config.stride)
    xs, ys, parents = [], [], []
    for i in range(dataset.n):
        for s in starts:
            xs.append(dataset.X[i, s : s + L, :])
            ys.append(dataset.Y[i])
            parents.append(i)
    sliced = TimeSeriesDataset(
        np.stack(xs), np.stack(ys), dataset.vocabulary, dataset.meta
    )
    return sliced, np.asarray(parents, dtype=np.int64)


def build_training_pool(dataset: TimeSeriesDataset, config: SlicingConfig):
    """Warp every series by each factor, then slice the pool to a common length.

    The slice length is ``ceil(fraction * shortest pooled length)`` so that
    every warped variant can be sliced.  Returns (sliced dataset, slice length).
    """
    T = dataset.length
    pool_lengths = [int(math.floor(f * T + 0.5)) for f in config.warp_factors]
    L = int(math.ceil(config.fraction * min(pool_lengths)))
    xs, ys = [], []
    for i in range(dataset.n):
        for factor in config.warp_factors:
            warped = (
                dataset.X[i]
                if factor == 1.0
                else window_warp(dataset.X[i], factor)
            )
            for s in slice_starts(warped.shape[0], L, config.stride):
                xs.append(warped[s : s + L, :])
                ys.append(dataset.Y[i])
    pool = TimeSeriesDataset(np.stack(xs), np.stack(ys), dataset.vocabulary, dataset.meta)
    return pool, L


# ---------------------------------------------------------------------------
# splits

def split_train_val(dataset: TimeSeriesDataset, fraction: float, seed: int):
    """Stratified split; each class contributes round(fraction * count) to val.

    Classes with a single member go entirely to train (with a warning).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    rng = SplitMix64(seed)
    labels = dataset.labels()
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in range(dataset.n_classes):
        members = [int(i) for i in np.flatnonzero(labels == cls)]
        if not members:
            continue
        if len(members) < 2:
            warnings.warn(
                f"class {cls} has a single member; keeping it in train", stacklevel=2
            )
            train_idx += members
            continue
        rng.shuffle(members)
        n_val = int(math.floor(fraction * len(members) + 0.5))
        n_val = min(max(n_val, 1), len(members) - 1)
        val_idx += members[:n_val]
        train_idx += members[n_val:]
    train_idx.sort()
    val_idx.sort()
    return dataset.take(train_idx), dataset.take(val_idx)
