"""Real / generated / target image grids for image-valued views."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .dataio import MultiViewDataset, PartialSplit
from .networks import ModelState


def pick_source_view(dataset: MultiViewDataset, view: int) -> int:
    others = [w for w in range(dataset.V) if w != view]
    images = [w for w in others if w in dataset.image_shapes]
    return images[0] if images else others[0]


def sample_grid(state: ModelState, dataset: MultiViewDataset, split: PartialSplit, view: int,
                count: int, source: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(grid, indices)``; the grid stacks real source images, images of
    ``view`` generated from the source's latent code, and the true ``view`` images."""
    if view not in dataset.image_shapes:
        raise ValueError(f"view {view} has no image metadata (image_shapes in the manifest)")
    if count < 1:
        raise ValueError("count must be at least 1")
    source = pick_source_view(dataset, view) if source is None else source
    if source == view:
        raise ValueError("source view must differ from the generated view")
    # samples whose target view was hidden come first: the genuine imputation case
    hidden = [i for i, r in sorted(split.unpaired.items()) if r == source]
    rest = [i for i in range(dataset.N) if i not in set(hidden)]
    idx = np.array((hidden + rest)[:count], dtype=np.int64)
    h, w = dataset.image_shapes[view]
    with torch.no_grad():
        x_src = torch.as_tensor(dataset.views[source][idx], dtype=torch.float32)
        fake = state.translate(source, view, x_src).numpy()
    target = dataset.views[view][idx]
    if source in dataset.image_shapes:
        sh, sw = dataset.image_shapes[source]
        real = dataset.views[source][idx].reshape(-1, sh, sw)
        if (sh, sw) != (h, w):
            real = _fit(real, h, w)
    else:
        real = np.zeros((len(idx), h, w))
    rows = [real, fake.reshape(-1, h, w), target.reshape(-1, h, w)]
    grid = np.concatenate([np.concatenate(list(r), axis=1) for r in rows], axis=0)
    return grid, idx


def _fit(images: np.ndarray, h: int, w: int) -> np.ndarray:
    out = np.zeros((len(images), h, w))
    hh, ww = min(h, images.shape[1]), min(w, images.shape[2])
    out[:, :hh, :ww] = images[:, :hh, :ww]
    return out


def dump_generated(state: ModelState, dataset: MultiViewDataset, split: PartialSplit, view: int,
                   count: int, out_dir, source: int | None = None) -> Path:
    """Write ``view_<v>_grid.png`` (3 rows x count columns) and the raw grid as CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid, idx = sample_grid(state, dataset, split, view, count, source)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    png = out / f"view_{view}_grid.png"
    plt.imsave(png, np.clip(grid, 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)
    np.savetxt(out / f"view_{view}_grid.csv", grid, delimiter=",", fmt="%.6g")
    np.savetxt(out / f"view_{view}_indices.csv", idx, fmt="%d")
    return png
