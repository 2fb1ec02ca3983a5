"""Training losses and the overall weighted objective.

Reconstruction-type terms are reduced per sample (sum over features, mean
over rows) so loss weights do not depend on batch size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError

PROB_EPS = 1e-7
DEFAULT_CYCLE_WEIGHT = 10.0


@dataclass
class LossWeights:
    adversarial: float = 1.0  # lambda_1
    fusion: float = 1.0  # lambda_2
    clustering: float = 1.0  # lambda_3
    cycle: float = DEFAULT_CYCLE_WEIGHT  # weight of the cycle term inside the adversarial loss

    def __post_init__(self):
        for name in ("adversarial", "fusion", "clustering", "cycle"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def reconstruction_error(x: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    _same_shape(x, recon)
    return ((x - recon) ** 2).sum() / x.shape[0]


def autoencoder_loss(x_list, recon_list) -> torch.Tensor:
    """Sum over views of the per-sample squared reconstruction error."""
    if len(x_list) != len(recon_list):
        raise ShapeError("need one reconstruction per view")
    return sum(reconstruction_error(x, r) for x, r in zip(x_list, recon_list))


def clamp_probs(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def gan_losses(real_probs: torch.Tensor, fake_probs: torch.Tensor):
    """Discriminator and (non-saturating) generator losses for one view.

    Returns ``(d_loss, g_loss)`` with ``d_loss = -mean log D(real) - mean log(1 - D(fake))``
    and ``g_loss = -mean log D(fake)``.
    """
    for p in (real_probs, fake_probs):
        if ((p < 0) | (p > 1) | torch.isnan(p)).any():
            raise ValueError("discriminator outputs must lie in [0, 1]")
    real = clamp_probs(real_probs)
    fake = clamp_probs(fake_probs)
    d_loss = -torch.log(real).mean() - torch.log1p(-fake).mean()
    g_loss = -torch.log(fake).mean()
    return d_loss, g_loss


def cycle_loss(x: torch.Tensor, cycle_recon: torch.Tensor) -> torch.Tensor:
    """Per-sample L1 error of one ``v -> w -> v`` round trip."""
    _same_shape(x, cycle_recon)
    return (x - cycle_recon).abs().sum() / x.shape[0]


def adversarial_training_loss(gan_terms, cycle_terms, cycle_weight: float = DEFAULT_CYCLE_WEIGHT):
    """Sum of per-view GAN terms plus the weighted sum of all cycle directions."""
    total = sum(gan_terms, 0.0) + cycle_weight * sum(cycle_terms, 0.0)
    return total


def total_objective(l_ae, l_at, l_fu, l_kl, weights: LossWeights):
    parts = (l_ae, l_at, l_fu, l_kl)
    for part in parts:
        value = float(part.detach()) if isinstance(part, torch.Tensor) else float(part)
        if not math.isfinite(value):
            raise ValueError("non-finite loss component")
    return l_ae + weights.adversarial * l_at + weights.fusion * l_fu + weights.clustering * l_kl
