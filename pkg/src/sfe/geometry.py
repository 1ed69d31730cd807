"""FiLM-conditioned sinusoidal geometry network.

A mapping network turns the latent code into per-layer frequencies and phase
shifts; the backbone applies sin(gamma * (W x + b) + beta) at every layer and
three linear heads read the final trunk feature: occupancy (squashed to
[0, 1] by a logistic), raw semantic logits, and the appearance descriptor.

The space of (gamma, beta) sets doubles as the inversion latent space:
FilmParams supports averaging, offsets and flattening for that purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import NumericalError

GAMMA_SCALE = 15.0
GAMMA_BASE = 30.0


@dataclass
class FilmParams:
    """Per-layer frequencies and phase shifts, possibly batched.

    Each entry of ``gammas``/``betas`` has shape [width] or [B, width].
    """

    gammas: list[torch.Tensor]
    betas: list[torch.Tensor]

    def __post_init__(self):
        if len(self.gammas) != len(self.betas):
            raise ValueError("gammas and betas must pair up per layer")

    @property
    def num_layers(self) -> int:
        return len(self.gammas)

    def detach(self) -> "FilmParams":
        return FilmParams([g.detach() for g in self.gammas], [b.detach() for b in self.betas])

    def clone(self) -> "FilmParams":
        return FilmParams([g.clone() for g in self.gammas], [b.clone() for b in self.betas])

    def mean(self) -> "FilmParams":
        """Average over the batch dimension."""
        return FilmParams(
            [g.mean(dim=0) for g in self.gammas], [b.mean(dim=0) for b in self.betas]
        )

    def add(self, other: "FilmParams") -> "FilmParams":
        return FilmParams(
            [g + og for g, og in zip(self.gammas, other.gammas)],
            [b + ob for b, ob in zip(self.betas, other.betas)],
        )

    def zeros_like(self) -> "FilmParams":
        return FilmParams(
            [torch.zeros_like(g) for g in self.gammas],
            [torch.zeros_like(b) for b in self.betas],
        )

    def tensors(self) -> list[torch.Tensor]:
        """Interleaved [gamma_0, beta_0, gamma_1, ...] for optimizers/serialization."""
        out = []
        for g, b in zip(self.gammas, self.betas):
            out.extend([g, b])
        return out

    @staticmethod
    def from_tensors(flat: list[torch.Tensor]) -> "FilmParams":
        if len(flat) % 2:
            raise ValueError("expected an even number of tensors")
        return FilmParams(list(flat[0::2]), list(flat[1::2]))


class MappingNetwork(nn.Module):
    """Latent code to FiLM parameters for a stack of conditioned layers."""

    def __init__(self, latent_dim: int, layer_widths: list[int], depth: int = 3, width: int = 128):
        super().__init__()
        self.latent_dim = latent_dim
        self.layer_widths = list(layer_widths)
        trunk = []
        in_dim = latent_dim
        for _ in range(depth):
            trunk.append(nn.Linear(in_dim, width))
            trunk.append(nn.LeakyReLU(0.2))
            in_dim = width
        self.trunk = nn.Sequential(*trunk)
        self.head = nn.Linear(width, 2 * sum(self.layer_widths))
        with torch.no_grad():
            for layer in self.trunk:
                if isinstance(layer, nn.Linear):
                    nn.init.kaiming_normal_(layer.weight, a=0.2, nonlinearity="leaky_relu")
            nn.init.kaiming_normal_(self.head.weight, a=0.2, nonlinearity="leaky_relu")
            # damp raw FiLM outputs so initial frequencies sit near the base
            self.head.weight.mul_(0.25)
            self.head.bias.zero_()

    def forward(self, z: torch.Tensor) -> FilmParams:
        if z.shape[-1] != self.latent_dim:
            raise ValueError(
                f"latent has dimension {z.shape[-1]}, expected {self.latent_dim}"
            )
        raw = self.head(self.trunk(z))
        gammas, betas = [], []
        offset = 0
        for w in self.layer_widths:
            gamma_raw = raw[..., offset : offset + w]
            beta = raw[..., offset + w : offset + 2 * w]
            gammas.append(gamma_raw * GAMMA_SCALE + GAMMA_BASE)
            betas.append(beta)
            offset += 2 * w
        return FilmParams(gammas, betas)


class FiLMLayer(nn.Module):
    """sin(gamma * (W x + b) + beta) with SIREN-style weight init."""

    def __init__(self, in_dim: int, out_dim: int, first: bool = False):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)
        with torch.no_grad():
            if first:
                bound = 1.0 / in_dim
            else:
                bound = math.sqrt(6.0 / in_dim) / GAMMA_BASE
            self.linear.weight.uniform_(-bound, bound)
            self.linear.bias.zero_()

    def forward(self, x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        pre = self.linear(x)
        if gamma.dim() == pre.dim() - 1:
            gamma = gamma.unsqueeze(-2)
            beta = beta.unsqueeze(-2)
        return torch.sin(gamma * pre + beta)


class GeometryNet(nn.Module):
    """Occupancy, semantic logits and appearance descriptor per point.

    The trunk is shared by all three heads. View directions are only consumed
    when ``view_dependent_descriptor`` is set, and then only by the descriptor
    head, keeping labels stable across views.
    """

    def __init__(
        self,
        latent_dim: int,
        num_classes: int,
        feature_dim: int,
        depth: int = 4,
        width: int = 64,
        mapping_depth: int = 3,
        mapping_width: int = 128,
        view_dependent_descriptor: bool = False,
    ):
        super().__init__()
        self.view_dependent_descriptor = view_dependent_descriptor
        self.mapping = MappingNetwork(
            latent_dim, [width] * depth, depth=mapping_depth, width=mapping_width
        )
        self.backbone = nn.ModuleList(
            [FiLMLayer(3 if i == 0 else width, width, first=(i == 0)) for i in range(depth)]
        )
        self.occupancy_head = nn.Linear(width, 1)
        self.semantic_head = nn.Linear(width, num_classes)
        desc_in = width + (3 if view_dependent_descriptor else 0)
        self.descriptor_head = nn.Linear(desc_in, feature_dim)

    def forward_film(
        self,
        film: FilmParams,
        x: torch.Tensor,
        dirs: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Evaluate the trunk under given FiLM parameters.

        ``x``: [..., P, 3] positions; ``film`` entries broadcast against the
        point dimension ([width] or [B, width] for x of shape [B, P, 3]).
        Returns (sigma [..., P], sem_logits [..., P, C], descriptor [..., P, F]).
        """
        if film.num_layers != len(self.backbone):
            raise ValueError(
                f"film carries {film.num_layers} layers, backbone has {len(self.backbone)}"
            )
        h = x
        for i, layer in enumerate(self.backbone):
            h = layer(h, film.gammas[i], film.betas[i])
        if not torch.isfinite(h).all():
            self._locate_bad_layer(film, x)
        sigma = torch.sigmoid(self.occupancy_head(h)).squeeze(-1)
        sem_logits = self.semantic_head(h)
        if self.view_dependent_descriptor:
            if dirs is None:
                raise ValueError("view directions required by this configuration")
            h = torch.cat([h, dirs], dim=-1)
        descriptor = self.descriptor_head(h)
        return sigma, sem_logits, descriptor

    def _locate_bad_layer(self, film: FilmParams, x: torch.Tensor):
        """Replay the trunk to name the first layer going non-finite."""
        with torch.no_grad():
            h = x
            for i, layer in enumerate(self.backbone):
                h = layer(h, film.gammas[i], film.betas[i])
                if not torch.isfinite(h).all():
                    raise NumericalError(f"non-finite activation in trunk layer {i}", layer=i)
        raise NumericalError("non-finite trunk output", layer=len(self.backbone) - 1)

    def forward(
        self, z: torch.Tensor, x: torch.Tensor, dirs: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.forward_film(self.mapping(z), x, dirs)
