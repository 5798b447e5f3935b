"""Command-line surface: train / compare / cam / mds.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
The default output directory can be set with the ``TSCLAB_OUT``
environment variable.  Training runs are reproducible: run ``r`` of a
sweep uses seed ``base_seed + r`` and identical flags yield bit-identical
model blobs.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import explain as E
from . import models as M
from . import optim as O
from . import reservoir as R
from . import stats as S
from .errors import (
    DataFormatError,
    DegenerateVarianceError,
    IntegrityError,
    MissingCellError,
    NumericError,
    ShapeError,
    TrainingDivergenceError,
    UnsupportedArchitectureError,
    VocabularyError,
)
from .layers import cross_entropy_loss

ALL_ARCHITECTURES = M.ARCHITECTURES + ("twiesn",)

_DATA_ERRORS = (
    DataFormatError, VocabularyError, IntegrityError, MissingCellError,
    ShapeError, UnsupportedArchitectureError, FileNotFoundError, ValueError,
)
_NUMERIC_ERRORS = (TrainingDivergenceError, NumericError, DegenerateVarianceError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _default_out() -> str:
    return os.environ.get("TSCLAB_OUT", ".")


@dataclass
class ExperimentConfig:
    """A reproducible training sweep: run r of ``runs`` uses seed base_seed + r."""

    train_path: str
    test_path: str
    architecture: str
    runs: int = 10
    base_seed: int = 0
    out_dir: str = "."
    overrides: dict = field(default_factory=dict)
    jobs: int = 1
    epoch_log: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError(f"run count must be >= 1, got {self.runs}")
        if self.architecture not in ALL_ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")


# ---------------------------------------------------------------------------
# training harness

def _twiesn_train_loss(model: R.TwiesnModel, dataset: D.TimeSeriesDataset) -> float:
    posterior = R.twiesn_posteriors(model, dataset.X)
    loss, _ = cross_entropy_loss(posterior, dataset.Y)
    return loss


def train_single_run(arch: str, train_ds: D.TimeSeriesDataset,
                     test_ds: D.TimeSeriesDataset, seed: int,
                     overrides: dict | None = None, log_fn=None):
    """One seeded run of one architecture; returns (saveable model, accuracy, loss).

    The sliced architectures (mcnn, tlenet) are trained on their augmented
    slice pools and evaluated by majority vote; mcnn grid-searches its
    filter length and pooling factor on the validation split.
    """
    overrides = overrides or {}
    T, Mdims, K = train_ds.length, train_ds.dims, train_ds.n_classes

    if arch == "twiesn":
        model = R.twiesn_fit(train_ds, R.default_grid(seed), split_seed=seed)
        acc = R.twiesn_accuracy(model, test_ds)
        return model, acc, _twiesn_train_loss(model, train_ds)

    config = O.default_config(arch, seed)
    for key in ("epochs", "batch_size", "learning_rate"):
        if overrides.get(key) is not None:
            setattr(config, key, overrides[key])

    if arch in ("mcnn", "tlenet"):
        warps = (1.0, 2.0, 0.5) if arch == "tlenet" else (1.0,)
        slicing = D.default_slicing(T, warps)
        pool, slice_len = D.build_training_pool(train_ds, slicing)
        if arch == "tlenet":
            spec = M.build_tlenet(slice_len, Mdims, K)
            spec.slicing = slicing
            model, history = O.train(spec, pool, config, log_fn)
        else:
            # same stratified split train() derives internally from this seed
            _, val_part = D.split_train_val(pool, config.split_fraction, seed)
            best = None
            for fl, pf in M.mcnn_grid(slice_len):
                spec = M.build_mcnn(slice_len, Mdims, K, fl, pf)
                spec.slicing = slicing
                candidate, history = O.train(spec, pool, config, log_fn)
                val_acc = M.accuracy(candidate, val_part)
                if best is None or val_acc > best[0]:
                    best = (val_acc, candidate, history)
            _, model, history = best
    else:
        spec = M.build_model(arch, T, Mdims, K)
        model, history = O.train(spec, train_ds, config, log_fn)

    acc = M.accuracy(model, test_ds)
    best_loss = history.losses[history.best_epoch - 1]
    return model, acc, best_loss


def run_experiment(config: ExperimentConfig) -> list[S.RunRecord]:
    """Train the sweep, persist models and run records, return the records.

    Runs may execute concurrently (``jobs``); each is seed-isolated and the
    results file is written once, after all runs finish.
    """
    train_ds, test_ds = D.load_pair(config.train_path, config.test_path)
    name = train_ds.meta.name
    arch = config.architecture
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(run_index: int):
        seed = config.base_seed + run_index
        log_fn = None
        log_handle = None
        if config.epoch_log:
            log_handle = open(out_dir / f"{name}_{arch}_seed{seed}.log", "w")
            log_fn = lambda line: print(line, file=log_handle)
        started = time.perf_counter()
        try:
            model, acc, loss = train_single_run(
                arch, train_ds, test_ds, seed, config.overrides, log_fn
            )
        finally:
            if log_handle is not None:
                log_handle.close()
        elapsed = time.perf_counter() - started
        manifest = out_dir / f"{name}_{arch}_seed{seed}.model"
        if isinstance(model, R.TwiesnModel):
            R.save_twiesn(model, manifest)
        else:
            M.save_model(model, manifest)
        return S.RunRecord(name, arch, seed, acc, loss, elapsed)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(one, range(config.runs)))
    else:
        records = [one(r) for r in range(config.runs)]
    S.save_runs(records, out_dir / "results.csv")
    return records


# ---------------------------------------------------------------------------
# commands

def _cmd_train(args) -> int:
    records = run_experiment(ExperimentConfig(
        train_path=args.train,
        test_path=args.test,
        architecture=args.arch,
        runs=args.runs,
        base_seed=args.seed,
        out_dir=args.out,
        overrides={
            "epochs": args.epochs,
            "batch_size": args.batch,
            "learning_rate": args.lr,
        },
        jobs=args.jobs,
        epoch_log=args.log,
    ))
    accs = np.array([r.accuracy for r in records])
    print(
        f"{args.arch} on {records[0].dataset}: "
        f"mean acc {accs.mean():.4f} +/- {accs.std():.4f} over {len(records)} run(s)"
    )
    return 0


def _load_metadata(path) -> dict:
    meta = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            meta[row["dataset"]] = {
                "theme": row.get("theme", ""),
                "length": int(row["length"]) if row.get("length") else 0,
                "train_size": int(row["train_size"]) if row.get("train_size") else 0,
            }
    return meta


def _cmd_compare(args) -> int:
    runs: list[S.RunRecord] = []
    for path in args.results:
        runs.extend(S.load_runs(path))
    table = S.aggregate(runs, args.aggregate)
    report = S.compare_classifiers(table, args.alpha)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(S.render_cd_diagram(report))
    text = S.render_text_report(report)
    if args.group:
        key = {"trainsize": "trainsize", "length": "length", "theme": "theme"}[args.group]
        if not args.meta:
            raise _UsageError("--group needs --meta <csv> with dataset metadata")
        grouped = S.grouped_ranks(runs, key, _load_metadata(args.meta), args.aggregate)
        lines = [f"grouped ranks by {key}:"]
        for band, (ranks, n) in grouped.items():
            lines.append(f"  {band} ({n} dataset(s)):")
            for cname in sorted(ranks, key=lambda v: (ranks[v], v)):
                lines.append(f"    {cname}: {ranks[cname]:.4f}")
        text += "\n".join(lines) + "\n"
    out.with_suffix(".txt").write_text(text)
    print(text, end="")
    return 0


def _load_gap_model(path) -> M.TrainedModel:
    first = Path(path).read_text().splitlines()[0]
    if "twiesn" in first or first.endswith("twiesn-v1"):
        raise UnsupportedArchitectureError(
            "twiesn has no GAP layer; class activation maps need fcn or resnet"
        )
    return M.load_model(path)


def _check_geometry(model: M.TrainedModel, dataset: D.TimeSeriesDataset) -> None:
    if dataset.n_classes != model.spec.classes:
        raise ShapeError(
            f"dataset has {dataset.n_classes} classes but the model was trained "
            f"with {model.spec.classes}"
        )
    if dataset.length != model.spec.input_length or dataset.dims != model.spec.input_dims:
        raise ShapeError(
            f"dataset geometry (T={dataset.length}, M={dataset.dims}) does not "
            f"match model (T={model.spec.input_length}, M={model.spec.input_dims})"
        )


def _cmd_cam(args) -> int:
    model = _load_gap_model(args.model)
    dataset = D.load_single(args.data)
    _check_geometry(model, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(dataset.n):
        cam = E.compute_cam(model, dataset.X[i], args.class_index)
        (out_dir / f"cam_{i:04d}.svg").write_text(
            E.export_cam_svg(dataset.X[i, :, 0], cam.normalized)
        )
        (out_dir / f"cam_{i:04d}.csv").write_text(E.cam_csv(cam))
    print(f"wrote {dataset.n} CAM svg/csv pairs to {out_dir}")
    return 0


def _cmd_mds(args) -> int:
    model = _load_gap_model(args.model)
    dataset = D.load_single(args.data)
    _check_geometry(model, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    features = E.gap_features(model, dataset)
    embedding = E.mds_embed(E.distance_matrix(features))
    labels = dataset.labels()
    (out_dir / "mds.svg").write_text(E.export_mds_svg(embedding, labels))
    (out_dir / "mds.csv").write_text(E.mds_csv(embedding, labels))
    print(f"wrote mds.svg and mds.csv to {out_dir} (stress {embedding.stress:.6f})")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> _Parser:
    parser = _Parser(prog="tsclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train N seeded runs of one architecture")
    p_train.add_argument("--arch", required=True, choices=ALL_ARCHITECTURES)
    p_train.add_argument("--train", required=True, help="train split file")
    p_train.add_argument("--test", required=True, help="test split file")
    p_train.add_argument("--runs", type=int, default=10)
    p_train.add_argument("--seed", type=int, default=0, help="base seed; run r uses seed+r")
    p_train.add_argument("--out", default=_default_out())
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--jobs", type=int, default=1)
    p_train.add_argument("--log", action="store_true", help="write per-epoch loss/lr logs")
    p_train.set_defaults(fn=_cmd_train)

    p_cmp = sub.add_parser("compare", help="statistical comparison + CD diagram")
    p_cmp.add_argument("--results", action="append", required=True,
                       help="results csv (repeatable; run records or baselines)")
    p_cmp.add_argument("--alpha", type=float, default=0.05)
    p_cmp.add_argument("--aggregate", default="mean",
                       choices=("mean", "median", "min", "max"))
    p_cmp.add_argument("--out", required=True, help="output svg path")
    p_cmp.add_argument("--group", choices=("theme", "length", "trainsize"))
    p_cmp.add_argument("--meta", help="dataset metadata csv for --group")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_cam = sub.add_parser("cam", help="class activation maps for every series")
    p_cam.add_argument("--model", required=True, help="model manifest path")
    p_cam.add_argument("--data", required=True)
    p_cam.add_argument("--class", dest="class_index", type=int, required=True)
    p_cam.add_argument("--out", default=_default_out())
    p_cam.set_defaults(fn=_cmd_cam)

    p_mds = sub.add_parser("mds", help="metric MDS of the GAP feature space")
    p_mds.add_argument("--model", required=True, help="model manifest path")
    p_mds.add_argument("--data", required=True)
    p_mds.add_argument("--out", default=_default_out())
    p_mds.set_defaults(fn=_cmd_mds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
