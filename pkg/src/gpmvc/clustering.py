"""Deep-embedded clustering head and clustering metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .errors import ShapeError, TrainingError

EMPTY_CLUSTER_EPS = 1e-12


def soft_assign(z: torch.Tensor, mu: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    """Student's t kernel between rows of ``z`` and centroids, row-normalized."""
    if mu.ndim != 2 or mu.shape[0] < 2:
        raise ShapeError("need at least 2 centroids")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if z.ndim != 2 or z.shape[1] != mu.shape[1]:
        raise ShapeError(f"latent width {tuple(z.shape)} does not match centroids {tuple(mu.shape)}")
    if not (torch.isfinite(z).all() and torch.isfinite(mu).all()):
        raise ValueError("non-finite input to soft_assign")
    dist2 = ((z.unsqueeze(1) - mu.unsqueeze(0)) ** 2).sum(dim=2)
    kernel = (1.0 + dist2 / alpha) ** (-(alpha + 1.0) / 2.0)
    return kernel / kernel.sum(dim=1, keepdim=True)


def target_distribution(q: torch.Tensor) -> torch.Tensor:
    """Square, divide by soft cluster frequency, renormalize. Returned detached."""
    q = q.detach()
    f = q.sum(dim=0)
    if (f <= 0).any():
        raise TrainingError("target distribution undefined: a cluster has zero frequency")
    w = q ** 2 / f
    return w / w.sum(dim=1, keepdim=True)


def kl_clustering_loss(p: torch.Tensor, q: torch.Tensor, reduction: str = "sum") -> torch.Tensor:
    """``sum_i sum_j p_ij log(p_ij / q_ij)`` with ``0 log 0 = 0``.

    ``reduction="mean"`` averages over rows instead of summing.
    """
    if p.shape != q.shape:
        raise ShapeError(f"P {tuple(p.shape)} and Q {tuple(q.shape)} differ in shape")
    support = p > 0
    if (support & (q <= 0)).any():
        raise ValueError("KL undefined: p_ij > 0 where q_ij = 0")
    safe_p = torch.where(support, p, torch.ones_like(p))
    safe_q = torch.where(support, q, torch.ones_like(q))
    terms = torch.where(support, p * (torch.log(safe_p) - torch.log(safe_q)), torch.zeros_like(p))
    total = terms.sum()
    if reduction == "mean":
        total = total / p.shape[0]
    return total


def init_centroids(z, k: int, seed: int, n_init: int = 10) -> np.ndarray:
    """Seeded k-means++ / Lloyd (<= 300 iterations, tol 1e-4); returns k x m centroids."""
    z = z.detach().cpu().numpy() if isinstance(z, torch.Tensor) else np.asarray(z)
    if z.shape[0] < k:
        raise TrainingError(f"cannot place {k} centroids with only {z.shape[0]} samples")
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=300, tol=1e-4,
                random_state=seed)
    km.fit(z.astype(np.float64))
    return km.cluster_centers_


def assign_clusters(q) -> np.ndarray:
    """Row-wise argmax; ties go to the smallest cluster index."""
    q = q.detach().cpu().numpy() if isinstance(q, torch.Tensor) else np.asarray(q)
    return np.argmax(q, axis=1)


def reseed_empty_centroids(z: torch.Tensor, mu: torch.Tensor, q: torch.Tensor) -> list[int]:
    """Move centroids of clusters with (near) zero soft frequency onto the least
    confidently assigned samples. Mutates ``mu`` in place; returns reseeded indices."""
    f = q.detach().sum(dim=0)
    empty = [int(j) for j in torch.nonzero(f < EMPTY_CLUSTER_EPS).flatten()]
    if not empty:
        return []
    order = torch.argsort(q.detach().max(dim=1).values)
    with torch.no_grad():
        for j, i in zip(empty, order):
            mu[j] = z[i].detach()
    return empty


# metrics ------------------------------------------------------------------


def _check_labels(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"label vectors differ in shape: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ShapeError("empty label vectors")
    return pred, true


def contingency(pred, true) -> np.ndarray:
    """Counts matrix: rows are predicted clusters, columns are true classes."""
    pred, true = _check_labels(pred, true)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def clustering_accuracy(pred, true) -> float:
    table = contingency(pred, true)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, true) -> float:
    """Mutual information over the geometric mean of the two entropies."""
    table = contingency(pred, true).astype(np.float64)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(pij.sum(axis=1), pij.sum(axis=0))
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, mi / np.sqrt(h_pred * h_true))))


def purity(pred, true) -> float:
    table = contingency(pred, true)
    return float(table.max(axis=1).sum() / table.sum())


@dataclass
class ClusterState:
    centroids: torch.Tensor
    alpha: float = 1.0
    q: torch.Tensor | None = None
    p: torch.Tensor | None = None


@dataclass
class ClusterResult:
    labels: np.ndarray
    acc: float
    nmi: float
    purity: float
    ratio: float | None = None
    seed: int | None = None
    mode: str | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def evaluate(cls, pred, true, **provenance) -> "ClusterResult":
        pred = np.asarray(pred)
        return cls(
            labels=pred,
            acc=clustering_accuracy(pred, true),
            nmi=nmi(pred, true),
            purity=purity(pred, true),
            **provenance,
        )

    def metrics(self) -> dict:
        out = {
            "acc": self.acc,
            "nmi": self.nmi,
            "purity": self.purity,
            "ratio": self.ratio,
            "seed": self.seed,
            "mode": self.mode,
        }
        out.update(self.extra)
        return out


def refine_centroids(z, mu) -> np.ndarray:
    """Lloyd iterations warm-started from the current centroids."""
    z = z.detach().cpu().numpy() if isinstance(z, torch.Tensor) else np.asarray(z)
    mu = mu.detach().cpu().numpy() if isinstance(mu, torch.Tensor) else np.asarray(mu)
    km = KMeans(n_clusters=mu.shape[0], init=mu.astype(np.float64), n_init=1, max_iter=300,
                tol=1e-4)
    km.fit(z.astype(np.float64))
    return km.cluster_centers_
