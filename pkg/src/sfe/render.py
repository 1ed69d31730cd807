"""Full generator pipeline: rays to composited RGB and semantic maps.

The pipeline per frame: cast one ray per pixel, intersect the K isosurfaces,
evaluate the geometry network at the crossings, label and club every point
through the semantic masking layer, color points with the appearance network
routed by group, then alpha-composite color and class probabilities. Residual
transmittance composites against a learnable constant background color and
the background class; rays with no valid crossing therefore render as pure
background rather than erroring.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .core import CameraPose
from .errors import NumericalError
from .geometry import FilmParams, GeometryNet
from .appearance import AppearanceNet
from .manifold import ScalarField, generate_rays, intersect_rays, iso_levels
from .rawio import save_labels_png, save_raw_f32, save_rgb_png
from .semask import club_labels, composite_weights_torch, manifold_labels_torch


class Generator(nn.Module):
    """Manifold field, geometry and appearance networks plus background color."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        m = cfg.model
        self.field = ScalarField(depth=m.field_depth, width=m.field_width)
        self.geometry = GeometryNet(
            latent_dim=m.latent_dim,
            num_classes=m.num_classes,
            feature_dim=m.feature_dim,
            depth=m.geometry_depth,
            width=m.geometry_width,
            mapping_depth=m.mapping.depth,
            mapping_width=m.mapping.width,
            view_dependent_descriptor=m.view_dependent_descriptor,
        )
        self.appearance = AppearanceNet(
            latent_dim=m.latent_dim,
            num_groups=m.num_groups,
            feature_dim=m.feature_dim,
            depth=m.appearance_depth,
            width=m.appearance_width,
            mapping_depth=m.mapping.depth,
            mapping_width=m.mapping.width,
            sharing=m.appearance_sharing,
        )
        self.bg_logit = nn.Parameter(torch.zeros(3))
        self.register_buffer("levels", iso_levels(m))
        self.register_buffer("clubbing", torch.tensor(m.clubbing, dtype=torch.int64))
        self.register_buffer(
            "bg_onehot",
            torch.eye(m.num_classes)[m.background_class],
        )

    @property
    def background_color(self) -> torch.Tensor:
        return torch.sigmoid(self.bg_logit)

    @property
    def background_group(self) -> int:
        return int(self.clubbing[self.cfg.model.background_class].item())

    def geometry_film(self, z: torch.Tensor) -> FilmParams:
        return self.geometry.mapping(z)

    def appearance_films(self, z_groups: torch.Tensor) -> list[FilmParams]:
        """Map per-group latents [..., n, d] through the n mapping networks."""
        n = self.cfg.model.num_groups
        if z_groups.shape[-2] != n:
            raise ValueError(f"expected {n} appearance latents, got {z_groups.shape[-2]}")
        return [self.appearance.map_latent(i, z_groups[..., i, :]) for i in range(n)]

    def geometry_parameters(self):
        """Everything frozen in stage 2: manifold field plus geometry net."""
        yield from self.field.parameters()
        yield from self.geometry.parameters()

    def appearance_parameters(self):
        yield from self.appearance.parameters()
        yield self.bg_logit


@dataclass
class RenderOutput:
    """Batched differentiable render results, image-shaped [B, H, W, ...]."""

    rgb: torch.Tensor | None          # [B, H, W, 3]
    sem_probs_fine: torch.Tensor      # [B, H, W, C], residual folded in
    sem_probs_group: torch.Tensor     # [B, H, W, n]
    labels: torch.Tensor              # [B, H, W] group labels
    labels_fine: torch.Tensor         # [B, H, W]
    depth: torch.Tensor               # [B, H, W] expected ray depth


def _argmax_lowest(values: torch.Tensor) -> torch.Tensor:
    """Argmax along the last dim with ties broken toward the lowest index."""
    count = values.shape[-1]
    idx = torch.arange(count, device=values.device)
    top = values.max(dim=-1, keepdim=True).values
    return torch.where(values == top, idx, count).min(dim=-1).values


def render_batch(
    gen: Generator,
    film_g: FilmParams,
    films_a: list[FilmParams | None],
    poses: list[CameraPose],
    width: int | None = None,
    height: int | None = None,
    with_appearance: bool = True,
) -> RenderOutput:
    """Render a batch of frames under explicit FiLM conditioning.

    ``film_g`` and each ``films_a[i]`` carry a leading batch dimension matching
    ``poses`` (or none, for a single frame). This is the code path shared by
    sampling, training and inversion; latent-space entry points map codes to
    FiLM parameters first.
    """
    cfg = gen.cfg
    width = cfg.render.width if width is None else width
    height = cfg.render.height if height is None else height
    if width < 1 or height < 1:
        raise ValueError("render resolution must be positive")
    batch = len(poses)
    dtype = gen.bg_logit.dtype

    if film_g.gammas[0].dim() == 1:
        film_g = FilmParams(
            [g.unsqueeze(0) for g in film_g.gammas], [b.unsqueeze(0) for b in film_g.betas]
        )
    films_a = [
        f
        if f is None or f.gammas[0].dim() == 2
        else FilmParams([g.unsqueeze(0) for g in f.gammas], [b.unsqueeze(0) for b in f.betas])
        for f in films_a
    ]

    bundles = [generate_rays(p, width, height, cfg.render, dtype=dtype) for p in poses]
    origins = torch.cat([b.origins for b in bundles], dim=0)
    directions = torch.cat([b.directions for b in bundles], dim=0)
    rays = bundles[0].__class__(
        origins=origins, directions=directions, near=cfg.render.near, far=cfg.render.far
    )
    inter = intersect_rays(gen.field, gen.levels, rays, cfg.model.coarse_samples)

    rays_per_frame = width * height
    K = cfg.model.num_levels
    num_classes = cfg.model.num_classes
    points = inter.positions.reshape(batch, rays_per_frame * K, 3)
    point_dirs = (
        directions.reshape(batch, rays_per_frame, 1, 3)
        .expand(batch, rays_per_frame, K, 3)
        .reshape(batch, rays_per_frame * K, 3)
    )
    sigma, sem_logits, descriptors = gen.geometry.forward_film(film_g, points, point_dirs)

    total_rays = batch * rays_per_frame
    valid = inter.valid
    sigma = sigma.reshape(total_rays, K) * valid.to(dtype)
    sem_probs = torch.softmax(sem_logits.reshape(total_rays, K, num_classes), dim=-1)

    labels_fine_pts = manifold_labels_torch(sigma, sem_probs)
    group_pts = club_labels(labels_fine_pts, gen.clubbing)
    group_pts = torch.where(valid, group_pts, torch.full_like(group_pts, -1))

    weights, residual = composite_weights_torch(sigma)

    rgb_img = None
    if with_appearance:
        sample_index = (
            torch.arange(batch).repeat_interleave(rays_per_frame * K).to(points.device)
        )
        rgb_pts = gen.appearance.forward_routed(
            films_a,
            descriptors.reshape(total_rays * K, -1),
            point_dirs.reshape(total_rays * K, 3),
            group_pts.reshape(-1),
            sample_index=sample_index,
        ).reshape(total_rays, K, 3)
        bg = gen.background_color
        rgb_flat = (weights.unsqueeze(-1) * rgb_pts).sum(dim=1) + residual.unsqueeze(-1) * bg
        if not torch.isfinite(rgb_flat).all():
            raise NumericalError("non-finite composited color")
        rgb_img = rgb_flat.reshape(batch, height, width, 3)

    sem_flat = (weights.unsqueeze(-1) * sem_probs).sum(dim=1)
    sem_flat = sem_flat + residual.unsqueeze(-1) * gen.bg_onehot.to(dtype)
    if not torch.isfinite(sem_flat).all():
        raise NumericalError("non-finite composited semantics")

    num_groups = cfg.model.num_groups
    sem_group_flat = torch.zeros(total_rays, num_groups, dtype=dtype, device=sem_flat.device)
    sem_group_flat.index_add_(1, gen.clubbing, sem_flat)

    labels_fine_px = _argmax_lowest(sem_flat)
    labels_px = gen.clubbing[labels_fine_px]
    depth_flat = (weights * inter.t.reshape(total_rays, K)).sum(dim=1)

    return RenderOutput(
        rgb=rgb_img,
        sem_probs_fine=sem_flat.reshape(batch, height, width, num_classes),
        sem_probs_group=sem_group_flat.reshape(batch, height, width, num_groups),
        labels=labels_px.reshape(batch, height, width),
        labels_fine=labels_fine_px.reshape(batch, height, width),
        depth=depth_flat.reshape(batch, height, width),
    )


def render_batch_latents(
    gen: Generator,
    z: torch.Tensor,
    z_groups: torch.Tensor,
    poses: list[CameraPose],
    width: int | None = None,
    height: int | None = None,
    with_appearance: bool = True,
) -> RenderOutput:
    """Latent-space entry: ``z`` [B, d], ``z_groups`` [B, n, d]."""
    film_g = gen.geometry_film(z)
    films_a = gen.appearance_films(z_groups) if with_appearance else [None] * gen.cfg.model.num_groups
    return render_batch(gen, film_g, films_a, poses, width, height, with_appearance)


@dataclass
class RenderedFrame:
    """A finished frame as numpy arrays, ready for serialization."""

    rgb: np.ndarray | None       # [H, W, 3] in [0, 1]
    sem_probs: np.ndarray        # [H, W, n] grouped probabilities
    sem_probs_fine: np.ndarray   # [H, W, C]
    labels: np.ndarray           # [H, W] group labels
    labels_fine: np.ndarray      # [H, W]
    depth: np.ndarray            # [H, W]

    def save(self, directory: str | Path, prefix: str = "frame") -> dict[str, str]:
        """Write PNGs and the raw probability map; returns written paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        if self.rgb is not None:
            p = directory / f"{prefix}_rgb.png"
            save_rgb_png(self.rgb, p)
            paths["rgb"] = str(p)
        p = directory / f"{prefix}_labels.png"
        save_labels_png(self.labels, p)
        paths["labels"] = str(p)
        p = directory / f"{prefix}_sem.f32"
        save_raw_f32(self.sem_probs, p)
        paths["sem_probs"] = str(p)
        return paths


def _to_frame(out: RenderOutput, index: int = 0) -> RenderedFrame:
    return RenderedFrame(
        rgb=None if out.rgb is None else out.rgb[index].detach().cpu().numpy(),
        sem_probs=out.sem_probs_group[index].detach().cpu().numpy(),
        sem_probs_fine=out.sem_probs_fine[index].detach().cpu().numpy(),
        labels=out.labels[index].cpu().numpy(),
        labels_fine=out.labels_fine[index].cpu().numpy(),
        depth=out.depth[index].detach().cpu().numpy(),
    )


def render_frame(
    gen: Generator,
    z: torch.Tensor,
    z_groups: torch.Tensor,
    pose: CameraPose,
    width: int | None = None,
    height: int | None = None,
) -> RenderedFrame:
    """Render one frame from latent codes; deterministic given inputs."""
    with torch.no_grad():
        out = render_batch_latents(
            gen, z.unsqueeze(0), z_groups.unsqueeze(0), [pose], width, height
        )
    return _to_frame(out)


def render_semantic_only(
    gen: Generator,
    z: torch.Tensor,
    pose: CameraPose,
    width: int | None = None,
    height: int | None = None,
) -> RenderedFrame:
    """Semantic map without evaluating the appearance network."""
    with torch.no_grad():
        out = render_batch_latents(
            gen,
            z.unsqueeze(0),
            torch.zeros(1, gen.cfg.model.num_groups, gen.cfg.model.latent_dim, dtype=z.dtype),
            [pose],
            width,
            height,
            with_appearance=False,
        )
    return _to_frame(out)
