"""Convert the UCI "Multiple Features" (handwritten numerals) CSV exports into
the manifest + per-view CSV layout used by ``gpmvc``.

Expects the ``mfeat-fou.csv``, ``mfeat-fac.csv`` and ``mfeat-kar.csv`` files
as shipped in the ``mvlearn`` wheel (header row, class label in the last
column). Usage::

    python scripts/export_hw.py /path/to/UCImultifeature data/hw
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gpmvc.dataio import MultiViewDataset, save_dataset  # noqa: E402

VIEWS = ["mfeat-fou.csv", "mfeat-fac.csv", "mfeat-kar.csv"]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", type=Path)
    parser.add_argument("out", type=Path)
    args = parser.parse_args(argv)

    views, labels = [], None
    for name in VIEWS:
        raw = np.genfromtxt(args.source / name, delimiter=",", skip_header=1)
        views.append(raw[:, :-1])
        lab = raw[:, -1].astype(np.int64)
        if labels is not None and not np.array_equal(lab, labels):
            raise SystemExit(f"label column of {name} disagrees with earlier views")
        labels = lab
    ds = MultiViewDataset("HW", tuple(views), labels, k=10)
    path = save_dataset(ds, args.out)
    print(f"wrote {path} (N={ds.N}, dims={ds.dims})")


if __name__ == "__main__":
    main()
