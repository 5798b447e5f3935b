#!/usr/bin/env python3
"""Small-scale GunPoint reproduction: train FCN and ResNet, compare, explain.

Expects data/GunPoint_TRAIN.txt and data/GunPoint_TEST.txt (see
scripts/fetch_datasets.py).  Trains 3 seeded runs of each architecture at
500 epochs, writes results + a critical-difference diagram, and renders a
class activation map and an MDS plot from the first FCN run.

Roughly an hour on one desktop core; pass --epochs to shrink further.
"""

import argparse
import sys
from pathlib import Path

from tsclab.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"


def run(argv):
    code = cli_main([str(a) for a in argv])
    if code != 0:
        raise SystemExit(code)


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs", type=int, default=500)
    parser.add_argument("--runs", type=int, default=3)
    parser.add_argument("--out", default=str(ROOT / "results" / "gunpoint"))
    args = parser.parse_args()

    train = DATA / "GunPoint_TRAIN.txt"
    test = DATA / "GunPoint_TEST.txt"
    if not train.exists():
        sys.exit("GunPoint files missing; run scripts/fetch_datasets.py first")

    for arch in ("fcn", "resnet"):
        run([
            "train", "--arch", arch, "--train", train, "--test", test,
            "--runs", args.runs, "--seed", "0", "--epochs", args.epochs,
            "--out", args.out,
        ])
    run([
        "compare", "--results", Path(args.out) / "results.csv",
        "--out", Path(args.out) / "cd.svg",
    ])
    model = Path(args.out) / "GunPoint_fcn_seed0.model"
    run(["cam", "--model", model, "--data", test, "--class", "0",
         "--out", Path(args.out) / "cam"])
    run(["mds", "--model", model, "--data", test, "--out", Path(args.out) / "mds"])
    print(f"artifacts under {args.out}")
