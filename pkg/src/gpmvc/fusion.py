"""Adaptive fusion of per-view latent codes into one common representation."""
from __future__ import annotations

import torch
from torch import nn

from .errors import ShapeError


class FusionParams(nn.Module):
    """Learnable view weights ``beta = softmax(raw_weights)`` plus an optional
    linear projection of the concatenated latents.

    The projection starts as the uniform average (blocks ``I / V``) so that it
    coincides with the weighted sum at initialization.
    """

    def __init__(self, n_views: int, latent_dim: int, projected: bool = True):
        super().__init__()
        self.n_views = n_views
        self.latent_dim = latent_dim
        self.raw_weights = nn.Parameter(torch.zeros(n_views))
        if projected:
            self.projection = nn.Linear(n_views * latent_dim, latent_dim, bias=False)
            with torch.no_grad():
                eye = torch.eye(latent_dim) / n_views
                self.projection.weight.copy_(torch.cat([eye] * n_views, dim=1))
        else:
            self.projection = None

    @property
    def projected(self) -> bool:
        return self.projection is not None

    def beta(self) -> torch.Tensor:
        return torch.softmax(self.raw_weights, dim=0)


def _check(z_list, params: FusionParams | None = None) -> None:
    if not z_list:
        raise ShapeError("no latent matrices to fuse")
    shape = z_list[0].shape
    for z in z_list:
        if z.ndim != 2 or z.shape != shape:
            raise ShapeError(f"latent shape mismatch: {tuple(z.shape)} vs {tuple(shape)}")
    if params is not None and len(z_list) != params.n_views:
        raise ShapeError(f"expected {params.n_views} latents, got {len(z_list)}")


def weighted_sum(z_list, beta: torch.Tensor) -> torch.Tensor:
    return sum(b * z for b, z in zip(beta, z_list))


def fuse(z_list, params: FusionParams) -> torch.Tensor:
    """Common representation: the projection of the concatenated latents, or
    ``sum_v beta_v Z_v`` when the projection is disabled."""
    _check(z_list, params)
    if params.projected:
        return params.projection(torch.cat(list(z_list), dim=1))
    return weighted_sum(z_list, params.beta())


def fusion_loss(z_list, params: FusionParams, reduction: str = "sum",
                weights_only: bool = False) -> torch.Tensor:
    """Squared Frobenius gap between the fused output and the beta-weighted sum.

    ``reduction="mean"`` divides by the number of rows. With ``weights_only``
    the gradient reaches beta alone: latents and projection are held fixed.
    """
    _check(z_list, params)
    if not params.projected:
        return z_list[0].new_zeros(())
    if weights_only:
        z_list = [z.detach() for z in z_list]
        gap = fuse(z_list, params).detach() - weighted_sum(z_list, params.beta())
    else:
        gap = fuse(z_list, params) - weighted_sum(z_list, params.beta())
    loss = (gap ** 2).sum()
    if reduction == "mean":
        loss = loss / gap.shape[0]
    return loss


def fuse_observed(z_list, observed: torch.Tensor, params: FusionParams) -> torch.Tensor:
    """Beta-weighted sum over the views each row actually observes.

    ``observed`` is an N x V boolean mask; beta is renormalized per row over its
    observed views. Rows of missing views are ignored whatever they contain.
    """
    _check(z_list, params)
    observed = observed.to(z_list[0].dtype)
    if observed.shape != (z_list[0].shape[0], len(z_list)):
        raise ShapeError("observed mask must be N x V")
    if (observed.sum(dim=1) == 0).any():
        raise ShapeError("every row must observe at least one view")
    w = observed * params.beta().to(observed.dtype)
    w = w / w.sum(dim=1, keepdim=True)
    out = torch.zeros_like(z_list[0])
    for v, z in enumerate(z_list):
        wv = w[:, v : v + 1]
        out = out + torch.where(wv > 0, wv * z, torch.zeros_like(z))
    return out


@torch.no_grad()
def init_projection_pca(params: FusionParams, z_list, balance_views: bool = False) -> None:
    """Set the projection to the top principal directions of the concatenated
    latents (no-op when the projection is disabled).

    With ``balance_views`` each view's block is first rescaled to the mean of
    the views' RMS row norms, so a view with larger codes does not dominate
    the directions while the overall scale of the codes is kept; the scales
    are folded into the projection weights.
    """
    if not params.projected:
        return
    _check(z_list, params)
    blocks = [z.double() - z.double().mean(dim=0, keepdim=True) for z in z_list]
    scales = [torch.ones((), dtype=torch.float64) for _ in blocks]
    if balance_views:
        rms = torch.stack([b.pow(2).sum(dim=1).mean().sqrt().clamp_min(1e-12) for b in blocks])
        scales = list(rms.mean() / rms)
    cat = torch.cat([b * c for b, c in zip(blocks, scales)], dim=1)
    _, _, vh = torch.linalg.svd(cat, full_matrices=False)
    m = params.latent_dim
    basis = vh[:m]
    # fix the sign so that each direction has a non-negative largest-magnitude entry
    pivots = basis.abs().argmax(dim=1)
    signs = torch.sign(basis[torch.arange(basis.shape[0]), pivots])
    signs[signs == 0] = 1.0
    col_scale = torch.cat([c.expand(b.shape[1]) for b, c in zip(blocks, scales)])
    basis = basis * col_scale[None, :]
    params.projection.weight.copy_((basis * signs[:, None]).to(params.projection.weight.dtype))
