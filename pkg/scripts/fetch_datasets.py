#!/usr/bin/env python3
"""Materialize the public univariate archive datasets the acceptance suite uses.

Downloads GunPoint and DiatomSizeReduction from timeseriesclassification.com
and unpacks their _TRAIN/_TEST text files into data/ (UCR text format,
tab-delimited).  Needs network access; run once, then the acceptance tests
that compare against the public splits become runnable.

Usage: python scripts/fetch_datasets.py [name ...]
"""

import io
import sys
import urllib.request
import zipfile
from pathlib import Path

BASE_URL = "https://www.timeseriesclassification.com/aeon-toolkit/{name}.zip"
DEFAULT_NAMES = ("GunPoint", "DiatomSizeReduction")
DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def fetch(name: str) -> None:
    url = BASE_URL.format(name=name)
    print(f"downloading {url}")
    with urllib.request.urlopen(url, timeout=120) as resp:
        blob = resp.read()
    archive = zipfile.ZipFile(io.BytesIO(blob))
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for split in ("TRAIN", "TEST"):
        member = f"{name}_{split}.txt"
        candidates = [m for m in archive.namelist() if m.endswith(member)]
        if not candidates:
            raise SystemExit(f"{member} not found inside {url}")
        target = DATA_DIR / member
        target.write_bytes(archive.read(candidates[0]))
        print(f"  wrote {target}")


if __name__ == "__main__":
    names = sys.argv[1:] or DEFAULT_NAMES
    for dataset_name in names:
        fetch(dataset_name)
