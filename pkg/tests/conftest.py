from pathlib import Path

import numpy as np
import pytest

from gpmvc.dataio import MultiViewDataset


def gaussian_multiview(n_per_class=40, k=2, dims=(6, 8), sep=4.0, seed=0, name="toy"):
    """k Gaussian clusters observed through random linear maps, squashed to
    [0, 1]. Centers sit on orthogonal axes, ``sep * sqrt(2)`` apart."""
    rng = np.random.default_rng(seed)
    width = max(3, k)
    centers = sep * np.eye(width)[:k]
    labels = np.repeat(np.arange(k), n_per_class)
    latent = centers[labels] + rng.normal(size=(len(labels), width))
    views = []
    for d in dims:
        proj = rng.normal(size=(width, d))
        x = latent @ proj + 0.1 * rng.normal(size=(len(labels), d))
        x = (x - x.min(axis=0)) / (x.max(axis=0) - x.min(axis=0))
        views.append(x)
    return MultiViewDataset(name, tuple(views), labels, k)


@pytest.fixture
def toy_dataset():
    return gaussian_multiview()


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(3)
    labels = np.array([0, 1] * 5)
    return MultiViewDataset("tiny", (rng.random((10, 3)), rng.random((10, 4))), labels, 2)


HW_DIR = Path(__file__).resolve().parents[1] / "data" / "hw"


@pytest.fixture
def hw_path():
    if not (HW_DIR / "manifest.json").exists():
        pytest.fail(f"HW dataset missing at {HW_DIR}; run scripts/export_hw.py")
    return HW_DIR


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
