"""Multi-view dataset loading, missing-view masks and mean imputation.

On-disk dataset layout (one directory)::

    manifest.json   {"name", "V", "N", "dims", "k", "views": [...], "labels": ...}
    view_<v>.csv    N rows, d_v comma-separated decimals, no header
    labels.csv      N integers, one per line

``manifest.json`` may also carry ``"image_shapes": {"<v>": [h, w]}`` for views
whose features are flattened grayscale images; this enables sample dumps.

Mask files are JSON ``{"ratio", "seed", "N", "V", "paired_idx", "unpaired"}``
where ``unpaired`` maps a sample index (string key) to its retained view.

Masks are drawn with ``numpy.random.Generator(PCG64(seed))``:

1. ``n_paired = floor(ratio * N + 0.5)`` (round half up);
2. ``perm = rng.permutation(N)``; the first ``n_paired`` entries are paired;
3. the remaining ``perm[n_paired:]`` are sorted ascending and given the
   retained views ``rng.permutation(arange(n_unpaired) % V)``, which keeps the
   per-view counts within one of each other.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError

MANIFEST_NAME = "manifest.json"
MASK_FORMAT_VERSION = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiViewDataset:
    name: str
    views: tuple[np.ndarray, ...]
    labels: np.ndarray
    k: int
    image_shapes: dict[int, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        views = tuple(_frozen(np.asarray(x, dtype=np.float64)) for x in self.views)
        labels = _frozen(np.asarray(self.labels))
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(
            self, "image_shapes", {int(v): tuple(s) for v, s in self.image_shapes.items()}
        )
        self.validate()

    @property
    def V(self) -> int:
        return len(self.views)

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> list[int]:
        return [x.shape[1] for x in self.views]

    def validate(self) -> None:
        if not self.views:
            raise DatasetError("dataset has no views")
        if self.labels.ndim != 1:
            raise DatasetError("labels must be a vector")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DatasetError("labels must be integers")
        n = len(self.labels)
        for v, x in enumerate(self.views):
            if x.ndim != 2:
                raise DatasetError(f"view {v} is not a matrix")
            if x.shape[0] != n:
                raise DatasetError(
                    f"row-count mismatch: view {v} has {x.shape[0]} rows, expected {n}"
                )
            if not np.all(np.isfinite(x)):
                raise DatasetError(f"view {v} contains non-finite values")
        if self.k < 1:
            raise DatasetError("k must be positive")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise DatasetError(f"labels must lie in 0..{self.k - 1}")
        present = np.unique(self.labels)
        if len(present) != self.k:
            raise DatasetError(f"expected {self.k} nonempty classes, found {len(present)}")
        for v, shape in self.image_shapes.items():
            if not 0 <= v < len(self.views):
                raise DatasetError(f"image shape given for unknown view {v}")
            if shape[0] * shape[1] != self.views[v].shape[1]:
                raise DatasetError(f"image shape {shape} does not match width of view {v}")

    def replace_views(self, views) -> "MultiViewDataset":
        return MultiViewDataset(self.name, tuple(views), self.labels, self.k, self.image_shapes)


def minmax_scale(x: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1]; constant columns map to 0."""
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span == 0] = 1.0
    return (x - lo) / span


def _read_matrix(path: Path) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"non-numeric cell in {path}: {exc}") from exc
    return x


def load_dataset(manifest_path, scale: bool = True) -> MultiViewDataset:
    """Load and validate a dataset from its manifest (file or directory).

    With ``scale`` (the default) every view is min-max scaled per column.
    """
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}") from exc
    root = path.parent
    n_views = int(manifest["V"])
    files = manifest.get("views") or [f"view_{v}.csv" for v in range(n_views)]
    if len(files) != n_views:
        raise DatasetError(f"manifest lists {len(files)} view files for V={n_views}")
    views = [_read_matrix(root / f) for f in files]
    n = int(manifest["N"])
    for v, x in enumerate(views):
        if x.shape[0] != n:
            raise DatasetError(f"row-count mismatch: view {v} has {x.shape[0]} rows, expected {n}")
    dims = manifest.get("dims")
    if dims is not None and list(dims) != [x.shape[1] for x in views]:
        raise DatasetError(f"manifest dims {dims} != file widths {[x.shape[1] for x in views]}")
    raw_labels = _read_matrix(root / manifest.get("labels", "labels.csv")).ravel()
    if len(raw_labels) != n:
        raise DatasetError(f"label count {len(raw_labels)} != N={n}")
    if not np.all(raw_labels == np.round(raw_labels)):
        raise DatasetError("labels must be integers")
    if scale:
        views = [minmax_scale(x) for x in views]
    shapes = {int(v): tuple(s) for v, s in manifest.get("image_shapes", {}).items()}
    return MultiViewDataset(
        name=manifest.get("name", root.name),
        views=tuple(views),
        labels=raw_labels.astype(np.int64),
        k=int(manifest["k"]),
        image_shapes=shapes,
    )


def save_dataset(dataset: MultiViewDataset, directory) -> Path:
    """Write ``dataset`` in the manifest + CSV layout; returns the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files = []
    for v, x in enumerate(dataset.views):
        name = f"view_{v}.csv"
        np.savetxt(root / name, x, delimiter=",", fmt="%.10g")
        files.append(name)
    np.savetxt(root / "labels.csv", dataset.labels, fmt="%d")
    manifest = {
        "name": dataset.name,
        "V": dataset.V,
        "N": dataset.N,
        "dims": dataset.dims,
        "k": dataset.k,
        "views": files,
        "labels": "labels.csv",
    }
    if dataset.image_shapes:
        manifest["image_shapes"] = {str(v): list(s) for v, s in dataset.image_shapes.items()}
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return root / MANIFEST_NAME


@dataclass(frozen=True)
class PartialSplit:
    impartial_ratio: float
    seed: int
    n_samples: int
    n_views: int
    paired_idx: np.ndarray
    unpaired: dict[int, int]

    def __post_init__(self):
        object.__setattr__(self, "paired_idx", _frozen(np.asarray(self.paired_idx, dtype=np.int64)))
        object.__setattr__(self, "unpaired", {int(i): int(v) for i, v in self.unpaired.items()})
        keys = np.fromiter(self.unpaired.keys(), dtype=np.int64, count=len(self.unpaired))
        allidx = np.concatenate([self.paired_idx, keys])
        if len(allidx) != self.n_samples or not np.array_equal(
            np.sort(allidx), np.arange(self.n_samples)
        ):
            raise DatasetError("paired and unpaired indices must partition 0..N-1")
        if any(not 0 <= v < self.n_views for v in self.unpaired.values()):
            raise DatasetError("retained view index out of range")

    @property
    def unpaired_idx(self) -> np.ndarray:
        return np.array(sorted(self.unpaired), dtype=np.int64)

    def observed(self) -> np.ndarray:
        """Boolean N x V matrix: True where the (sample, view) entry is present."""
        mask = np.zeros((self.n_samples, self.n_views), dtype=bool)
        mask[self.paired_idx] = True
        for i, v in self.unpaired.items():
            mask[i, v] = True
        return mask

    def view_counts(self) -> list[int]:
        counts = [0] * self.n_views
        for v in self.unpaired.values():
            counts[v] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "format_version": MASK_FORMAT_VERSION,
            "ratio": self.impartial_ratio,
            "seed": self.seed,
            "N": self.n_samples,
            "V": self.n_views,
            "paired_idx": [int(i) for i in self.paired_idx],
            "unpaired": {str(i): self.unpaired[i] for i in sorted(self.unpaired)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PartialSplit":
        try:
            paired = d["paired_idx"]
            unpaired = {int(i): int(v) for i, v in d["unpaired"].items()}
            n = d.get("N", len(paired) + len(unpaired))
            n_views = d.get("V", max(unpaired.values(), default=0) + 1)
            return cls(float(d["ratio"]), int(d["seed"]), int(n), int(n_views), paired, unpaired)
        except (KeyError, TypeError, AttributeError) as exc:
            raise DatasetError(f"malformed mask: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PartialSplit":
        p = Path(path)
        if not p.exists():
            raise DatasetError(f"missing mask file: {p}")
        return cls.from_dict(json.loads(p.read_text()))

    def check_compatible(self, dataset: MultiViewDataset) -> None:
        if self.n_samples != dataset.N or self.n_views != dataset.V:
            raise DatasetError(
                f"mask is for N={self.n_samples}, V={self.n_views}; "
                f"dataset has N={dataset.N}, V={dataset.V}"
            )


def paired_count(ratio: float, n: int) -> int:
    return int(math.floor(ratio * n + 0.5))


def make_split(n_samples: int, n_views: int, ratio: float, seed: int) -> PartialSplit:
    """Shape-only variant of :func:`make_partial_split`."""
    if not (0.0 <= ratio <= 1.0) or math.isnan(ratio):
        raise ConfigError("ratio must be in [0,1]")
    if n_views < 2:
        raise ConfigError("partial splits require at least 2 views")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_paired = paired_count(ratio, n_samples)
    perm = rng.permutation(n_samples)
    paired = np.sort(perm[:n_paired])
    rest = np.sort(perm[n_paired:])
    retained = rng.permutation(np.arange(len(rest)) % n_views)
    unpaired = {int(i): int(v) for i, v in zip(rest, retained)}
    return PartialSplit(float(ratio), int(seed), int(n_samples), int(n_views), paired, unpaired)


def make_partial_split(dataset: MultiViewDataset, ratio: float, seed: int) -> PartialSplit:
    """Pick ``round(ratio * N)`` paired samples; every other sample keeps one view."""
    return make_split(dataset.N, dataset.V, ratio, seed)


def mean_impute(dataset: MultiViewDataset, split: PartialSplit) -> MultiViewDataset:
    """Fill every missing (sample, view) row with that view's observed column means."""
    split.check_compatible(dataset)
    observed = split.observed()
    views = []
    for v, x in enumerate(dataset.views):
        seen = observed[:, v]
        if not seen.any():
            raise DatasetError(f"view {v} is observed by zero samples")
        filled = x.copy()
        filled[~seen] = x[seen].mean(axis=0)
        views.append(filled)
    return dataset.replace_views(views)
