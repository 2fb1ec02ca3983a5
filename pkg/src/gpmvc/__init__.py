"""Partial multi-view clustering with adversarial view imputation."""
from .dataio import MultiViewDataset, PartialSplit, load_dataset, make_partial_split
from .trainer import TrainConfig, run_baseline, run_pipeline

__all__ = [
    "MultiViewDataset",
    "PartialSplit",
    "TrainConfig",
    "load_dataset",
    "make_partial_split",
    "run_baseline",
    "run_pipeline",
]
__version__ = "0.1.0"
