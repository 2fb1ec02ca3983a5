"""Encoders, generators and discriminators as stacked fully connected maps.

Every view ``v`` owns an encoder ``E_v: R^{d_v} -> R^m``, a generator
``G_v: R^m -> R^{d_v}`` and a discriminator ``D_v: R^{d_v} -> (0, 1)``.
The last ``shared_layers`` encoder layers are one module referenced by all
encoders, so updating it moves every view's latent code.

Checkpoint container (``torch.save`` zip archive)::

    {"format": "gpmvc-checkpoint", "version": 1,
     "config": NetworkConfig fields, "dims": [d_1, ..., d_V],
     "tensors": {"<component>/<view|shared>/<layer>.<weight|bias>": tensor, ...},
     "extra": {...}}

with components ``encoder``, ``generator``, ``discriminator`` and ``fusion``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .errors import ConfigError, DatasetError, ShapeError
from .fusion import FusionParams

CHECKPOINT_FORMAT = "gpmvc-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
    "relu": nn.ReLU,
    "sigmoid": nn.Sigmoid,
    "tanh": nn.Tanh,
    "identity": nn.Identity,
}


def activation(name: str) -> nn.Module:
    try:
        return _ACTIVATIONS[name]()
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


def default_latent_dim(dims, k: int) -> int:
    m = 32 if max(dims) <= 256 else 64
    return max(m, k)


@dataclass
class NetworkConfig:
    latent_dim: int = 32
    encoder_hidden: list[int] = field(default_factory=lambda: [512, 256])
    discriminator_hidden: list[int] = field(default_factory=lambda: [256, 64])
    hidden_activation: str = "leaky_relu"
    output_activation: str = "sigmoid"
    # number of trailing encoder layers whose parameters are shared across views
    shared_layers: int = 1
    fusion_mode: str = "projected"

    def validate(self, k: int | None = None) -> None:
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")
        if k is not None and self.latent_dim < k:
            raise ConfigError(f"latent_dim {self.latent_dim} must be >= number of clusters {k}")
        if any(w < 1 for w in self.encoder_hidden):
            raise ConfigError("encoder widths must be positive")
        if len(self.discriminator_hidden) != 2:
            raise ConfigError("discriminator_hidden must list exactly 2 widths")
        if not 0 <= self.shared_layers <= len(self.encoder_hidden) + 1:
            raise ConfigError("shared_layers exceeds encoder depth")
        for name in (self.hidden_activation, self.output_activation):
            if name not in _ACTIVATIONS:
                raise ConfigError(f"unknown activation {name!r}")
        if self.fusion_mode not in ("projected", "weighted_sum"):
            raise ConfigError("fusion_mode must be 'projected' or 'weighted_sum'")

    @property
    def generator_hidden(self) -> list[int]:
        return list(reversed(self.encoder_hidden))

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


def _stack(widths, hidden_act: str, last_act: str | None) -> list[nn.Module]:
    mods: list[nn.Module] = []
    for i in range(len(widths) - 1):
        mods.append(nn.Linear(widths[i], widths[i + 1]))
        if i < len(widths) - 2:
            mods.append(activation(hidden_act))
        elif last_act is not None:
            mods.append(activation(last_act))
    return mods


class ModelState(nn.Module):
    """All trainable parameters: encoders (with shared block), generators,
    discriminators and fusion weights."""

    def __init__(self, config: NetworkConfig, dims):
        super().__init__()
        config.validate()
        self.config = config
        self.dims = [int(d) for d in dims]
        m = config.latent_dim
        n_layers = len(config.encoder_hidden) + 1
        n_private = n_layers - config.shared_layers
        widths = [None] + list(config.encoder_hidden) + [m]

        if config.shared_layers > n_layers - 1 and len(set(self.dims)) > 1:
            raise ConfigError("sharing the input layer requires equal view widths")

        private = []
        for d in self.dims:
            w = [d] + widths[1:]
            mods = _stack(w[: n_private + 1], config.hidden_activation, config.hidden_activation)
            private.append(nn.Sequential(*mods))
        self.enc_private = nn.ModuleList(private)
        shared_w = ([self.dims[0]] + widths[1:])[n_private:]
        self.enc_shared = nn.Sequential(*_stack(shared_w, config.hidden_activation, None))
        if n_private == n_layers:
            # nothing shared: the latent head is the last private layer, drop its activation
            for seq in self.enc_private:
                del seq[-1]

        self.generators = nn.ModuleList(
            nn.Sequential(
                *_stack([m] + config.generator_hidden + [d], config.hidden_activation,
                        config.output_activation)
            )
            for d in self.dims
        )
        self.discriminators = nn.ModuleList(
            nn.Sequential(
                *_stack([d] + list(config.discriminator_hidden) + [1], config.hidden_activation,
                        "sigmoid")
            )
            for d in self.dims
        )
        self.fusion = FusionParams(len(self.dims), m, projected=config.fusion_mode == "projected")

    @property
    def V(self) -> int:
        return len(self.dims)

    def encoder_parameters(self):
        yield from self.enc_private.parameters()
        yield from self.enc_shared.parameters()

    def generator_parameters(self):
        return self.generators.parameters()

    def discriminator_parameters(self):
        return self.discriminators.parameters()

    def _check_view(self, v: int) -> None:
        if not 0 <= v < self.V:
            raise ShapeError(f"view index {v} out of range 0..{self.V - 1}")

    def encode(self, v: int, x: torch.Tensor) -> torch.Tensor:
        self._check_view(v)
        if x.ndim != 2 or x.shape[1] != self.dims[v]:
            raise ShapeError(f"encoder {v} expects width {self.dims[v]}, got {tuple(x.shape)}")
        return self.enc_shared(self.enc_private[v](x))

    def generate(self, v: int, z: torch.Tensor) -> torch.Tensor:
        self._check_view(v)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(
                f"generator expects latent width {self.config.latent_dim}, got {tuple(z.shape)}"
            )
        return self.generators[v](z)

    def discriminate(self, v: int, x: torch.Tensor) -> torch.Tensor:
        self._check_view(v)
        if x.ndim != 2 or x.shape[1] != self.dims[v]:
            raise ShapeError(
                f"discriminator {v} expects width {self.dims[v]}, got {tuple(x.shape)}"
            )
        return self.discriminators[v](x).squeeze(1)

    def translate(self, src: int, dst: int, x: torch.Tensor) -> torch.Tensor:
        """``G_dst(E_src(x))``: generate view ``dst`` from a view-``src`` sample."""
        return self.generate(dst, self.encode(src, x))

    # checkpoint keys ------------------------------------------------------

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        groups = [
            ("encoder", [str(v) for v in range(self.V)], self.enc_private),
            ("encoder", ["shared"], [self.enc_shared]),
            ("generator", [str(v) for v in range(self.V)], self.generators),
            ("discriminator", [str(v) for v in range(self.V)], self.discriminators),
        ]
        for component, tags, seqs in groups:
            for tag, seq in zip(tags, seqs):
                layer = 0
                for mod in seq:
                    if isinstance(mod, nn.Linear):
                        out[f"{component}/{tag}/{layer}.weight"] = mod.weight.detach().cpu()
                        out[f"{component}/{tag}/{layer}.bias"] = mod.bias.detach().cpu()
                        layer += 1
        for name, p in self.fusion.named_parameters():
            out[f"fusion/-/{name}"] = p.detach().cpu()
        return out

    def load_named_tensors(self, tensors: dict[str, torch.Tensor]) -> None:
        mine = self.named_tensors()
        missing = set(mine) - set(tensors)
        if missing:
            raise DatasetError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        live = dict(self._live_tensors())
        with torch.no_grad():
            for key, target in live.items():
                src = tensors[key]
                if src.shape != target.shape:
                    raise DatasetError(f"tensor {key} has shape {tuple(src.shape)}, "
                                       f"expected {tuple(target.shape)}")
                target.copy_(src)

    def _live_tensors(self):
        for key in self.named_tensors():
            component, tag, rest = key.split("/")
            if component == "fusion":
                yield key, dict(self.fusion.named_parameters())[rest]
                continue
            layer, kind = rest.split(".")
            if component == "encoder":
                seq = self.enc_shared if tag == "shared" else self.enc_private[int(tag)]
            elif component == "generator":
                seq = self.generators[int(tag)]
            else:
                seq = self.discriminators[int(tag)]
            linears = [m for m in seq if isinstance(m, nn.Linear)]
            yield key, getattr(linears[int(layer)], kind)


def encode(state: ModelState, v: int, x: torch.Tensor) -> torch.Tensor:
    return state.encode(v, x)


def generate(state: ModelState, v: int, z: torch.Tensor) -> torch.Tensor:
    return state.generate(v, z)


def discriminate(state: ModelState, v: int, x: torch.Tensor) -> torch.Tensor:
    return state.discriminate(v, x)


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "dims": state.dims,
        "tensors": state.named_tensors(),
        "extra": extra or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[ModelState, dict]:
    """Rebuild a ModelState from a checkpoint; returns ``(state, extra)``."""
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"missing checkpoint: {p}")
    payload = torch.load(p, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DatasetError(f"{p} is not a gpmvc checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DatasetError(f"unsupported checkpoint version {payload.get('version')}")
    state = ModelState(NetworkConfig.from_dict(payload["config"]), payload["dims"])
    state.load_named_tensors(payload["tensors"])
    return state, payload.get("extra", {})
