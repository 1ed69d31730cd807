"""Per-semantic appearance network.

One mapping network per semantic group conditions a sinusoidal backbone over
the appearance descriptors (and ray directions); a linear color head squashes
to RGB in [0, 1]. Points are routed hard by their group label, so the color
of a point in group i depends only on that group's latent code, backbone and
head: resampling another group's latent cannot change it even at the bit
level.

Weight sharing is configurable to reproduce the ablation orderings:
``proposed`` (shared backbone, per-group color heads), ``none`` (independent
backbones and heads per group) and ``full`` (everything shared).
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError
from .geometry import FiLMLayer, FilmParams, MappingNetwork


class AppearanceNet(nn.Module):
    def __init__(
        self,
        latent_dim: int,
        num_groups: int,
        feature_dim: int,
        depth: int = 4,
        width: int = 64,
        mapping_depth: int = 3,
        mapping_width: int = 128,
        sharing: str = "proposed",
    ):
        super().__init__()
        if sharing not in ("proposed", "none", "full"):
            raise ConfigError(f"unknown appearance sharing mode '{sharing}'")
        self.num_groups = num_groups
        self.sharing = sharing
        self.in_dim = feature_dim + 3  # descriptor plus ray direction
        self.mappings = nn.ModuleList(
            MappingNetwork(latent_dim, [width] * depth, depth=mapping_depth, width=mapping_width)
            for _ in range(num_groups)
        )

        def make_backbone():
            return nn.ModuleList(
                FiLMLayer(self.in_dim if i == 0 else width, width, first=(i == 0))
                for i in range(depth)
            )

        backbone_count = num_groups if sharing == "none" else 1
        head_count = 1 if sharing == "full" else num_groups
        self.backbones = nn.ModuleList(make_backbone() for _ in range(backbone_count))
        self.color_heads = nn.ModuleList(nn.Linear(width, 3) for _ in range(head_count))

    def backbone_for(self, group: int) -> nn.ModuleList:
        return self.backbones[group if self.sharing == "none" else 0]

    def head_for(self, group: int) -> nn.Linear:
        return self.color_heads[0 if self.sharing == "full" else group]

    def map_latent(self, group: int, z: torch.Tensor) -> FilmParams:
        """FiLM parameters of group ``group`` for latent ``z``."""
        if not 0 <= group < self.num_groups:
            raise IndexError(f"group {group} outside [0, {self.num_groups})")
        return self.mappings[group](z)

    def forward_routed(
        self,
        films: list[FilmParams | None],
        descriptors: torch.Tensor,
        dirs: torch.Tensor,
        group_labels: torch.Tensor,
        sample_index: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Color every point according to its group's conditioning.

        ``descriptors``: [P, F]; ``dirs``: [P, 3]; ``group_labels``: [P] with
        -1 for points to skip. ``films[i]`` may carry a batch dimension, in
        which case ``sample_index`` maps each point to its batch row. Points
        of empty groups never touch that group's latent.
        """
        rgb = torch.zeros(
            descriptors.shape[0], 3, dtype=descriptors.dtype, device=descriptors.device
        )
        features = torch.cat([descriptors, dirs], dim=-1)
        for group in range(self.num_groups):
            mask = group_labels == group
            if not mask.any():
                continue
            film = films[group]
            if film is None:
                raise ConfigError(f"no appearance latent supplied for non-empty group {group}")
            h = features[mask]
            for i, layer in enumerate(self.backbone_for(group)):
                gamma, beta = film.gammas[i], film.betas[i]
                if gamma.dim() == 2:
                    if sample_index is None:
                        raise ValueError("sample_index required for batched film parameters")
                    gamma = gamma[sample_index[mask]]
                    beta = beta[sample_index[mask]]
                h = layer(h, gamma, beta)
            rgb[mask] = torch.sigmoid(self.head_for(group)(h))
        return rgb

    def forward(
        self,
        latents: list[torch.Tensor],
        descriptors: torch.Tensor,
        dirs: torch.Tensor,
        group_labels: torch.Tensor,
    ) -> torch.Tensor:
        """Route points conditioned directly on per-group latent codes."""
        if len(latents) != self.num_groups:
            raise ConfigError(
                f"expected {self.num_groups} appearance latents, got {len(latents)}"
            )
        films: list[FilmParams | None] = [None] * self.num_groups
        for group in range(self.num_groups):
            if (group_labels == group).any():
                films[group] = self.map_latent(group, latents[group])
        return self.forward_routed(films, descriptors, dirs, group_labels)
