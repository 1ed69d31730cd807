"""Pivotal inversion, mask-driven editing and per-semantic transfer.

The inversion space is the space of FiLM parameter sets. The pivot is the
elementwise mean of the mapping-network outputs over many sampled latent
codes (one pivot for geometry, one per appearance group); inversion optimizes
per-layer offsets from that pivot with Adam so the rendered semantic map and
image match a target. Editing reuses the machinery with the image terms
masked to the unedited region, leaving the generator free inside it; transfer
swaps one group's appearance parameters outright and optimizes geometry
offsets toward composite targets.

Appearance offsets stay fixed during geometry transfer, but gradients still
flow through both networks: occupancy and descriptors feed the image terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import load_container, save_container
from .config import InversionConfig
from .core import CameraPose, sample_latent
from .geometry import FilmParams
from .render import Generator, RenderOutput, render_batch


@dataclass
class PivotLatent:
    """Mean FiLM parameters: the anchor point for inversion offsets."""

    geo: FilmParams
    app: list[FilmParams]


@dataclass
class EditOffset:
    """Per-layer offsets to the pivot, for geometry and every group."""

    geo: FilmParams
    app: list[FilmParams]

    def clone(self) -> "EditOffset":
        return EditOffset(self.geo.clone(), [f.clone() for f in self.app])

    def detach(self) -> "EditOffset":
        return EditOffset(self.geo.detach(), [f.detach() for f in self.app])

    def tensors(self) -> list[torch.Tensor]:
        out = self.geo.tensors()
        for f in self.app:
            out.extend(f.tensors())
        return out


def zero_offsets(pivot: PivotLatent) -> EditOffset:
    return EditOffset(pivot.geo.zeros_like(), [f.zeros_like() for f in pivot.app])


def compute_pivot(
    gen: Generator, sample_count: int = 10000, seed: int = 0, batch: int = 512
) -> PivotLatent:
    """Average frequency/phase outputs over sampled latent codes."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    cfg = gen.cfg.model
    rng = torch.Generator().manual_seed(seed)

    def mean_of(mapper) -> FilmParams:
        sums: FilmParams | None = None
        remaining = sample_count
        while remaining > 0:
            take = min(batch, remaining)
            z = sample_latent(rng, cfg.latent_dim, count=take)
            with torch.no_grad():
                film = mapper(z)
            part = FilmParams(
                [g.sum(dim=0) for g in film.gammas], [b.sum(dim=0) for b in film.betas]
            )
            sums = part if sums is None else sums.add(part)
            remaining -= take
        return FilmParams(
            [g / sample_count for g in sums.gammas], [b / sample_count for b in sums.betas]
        )

    geo = mean_of(gen.geometry.mapping)
    app = [mean_of(gen.appearance.mappings[i]) for i in range(cfg.num_groups)]
    return PivotLatent(geo=geo, app=app)


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class IoU and their mean; classes absent from both are excluded."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("label maps must share a shape")
    if pred.size and (pred.max() >= num_classes or gt.max() >= num_classes):
        raise ValueError("labels must be < num_classes")
    ious = np.full(num_classes, np.nan)
    for c in range(num_classes):
        p = pred == c
        g = gt == c
        union = (p | g).sum()
        if union == 0:
            continue
        ious[c] = (p & g).sum() / union
    present = ~np.isnan(ious)
    mean = float(ious[present].mean()) if present.any() else 1.0
    return ious, mean


class RandomFeatures(nn.Module):
    """Fixed random-weight conv stack used as the perceptual feature extractor."""

    def __init__(self, seed: int = 7, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        rng = torch.Generator().manual_seed(seed)
        convs = []
        in_ch = 3
        for w in widths:
            conv = nn.Conv2d(in_ch, w, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                weight = torch.randn(conv.weight.shape, generator=rng)
                conv.weight.copy_(weight * math.sqrt(2.0 / (in_ch * 9)))
                conv.bias.zero_()
            convs.append(conv)
            in_ch = w
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = torch.relu(conv(h))
            feats.append(h)
        return feats


def perceptual_loss(features: RandomFeatures, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Feature-space MSE between two [H, W, 3] images."""
    fa = features(a.permute(2, 0, 1).unsqueeze(0))
    fb = features(b.permute(2, 0, 1).unsqueeze(0))
    loss = sum(torch.mean((x - y) ** 2) for x, y in zip(fa, fb))
    return loss


def offset_films(pivot: PivotLatent, offset: EditOffset) -> tuple[FilmParams, list[FilmParams]]:
    return pivot.geo.add(offset.geo), [
        p.add(o) for p, o in zip(pivot.app, offset.app)
    ]


def render_offset(
    gen: Generator,
    pivot: PivotLatent,
    offset: EditOffset,
    pose: CameraPose,
    width: int | None = None,
    height: int | None = None,
) -> RenderOutput:
    film_g, films_a = offset_films(pivot, offset)
    return render_batch(gen, film_g, films_a, [pose], width, height)


def _group_onehot(mask: np.ndarray, num_groups: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(
        torch.from_numpy(np.ascontiguousarray(mask)).long(), num_groups
    ).float()


@dataclass
class InversionProblem:
    """Target of an inversion/edit optimization run."""

    image: torch.Tensor        # [H, W, 3]
    mask_probs: torch.Tensor   # [H, W, n]; one-hot for hard targets
    mask_labels: np.ndarray    # [H, W]
    pose: CameraPose
    region: torch.Tensor | None = None  # [H, W]; image terms masked to (1 - region)

    @staticmethod
    def from_arrays(image: np.ndarray, mask: np.ndarray, pose: CameraPose, num_groups: int,
                    region: np.ndarray | None = None) -> "InversionProblem":
        """Build a problem from a target image and mask.

        ``mask`` is either an [H, W] hard label map or an [H, W, n] soft
        probability map (e.g. the model's own composited semantics, which
        makes self-inversion an exact fixed point).
        """
        mask = np.asarray(mask)
        if mask.ndim == 3:
            probs = torch.from_numpy(np.ascontiguousarray(mask)).float()
            labels = mask.argmax(-1)
        else:
            probs = _group_onehot(mask, num_groups)
            labels = mask
        return InversionProblem(
            image=torch.from_numpy(np.ascontiguousarray(image)).float(),
            mask_probs=probs,
            mask_labels=np.asarray(labels),
            pose=pose,
            region=None if region is None else torch.from_numpy(
                np.ascontiguousarray(region)).float(),
        )


def _masked_mse(a: torch.Tensor, b: torch.Tensor, keep: torch.Tensor | None) -> torch.Tensor:
    if keep is None:
        return torch.mean((a - b) ** 2)
    while keep.dim() < a.dim():
        keep = keep.unsqueeze(-1)
    return torch.mean(((a - b) * keep) ** 2)


def optimize_offsets(
    gen: Generator,
    pivot: PivotLatent,
    problem: InversionProblem,
    opts: InversionConfig,
    initial: EditOffset | None = None,
    optimize_appearance: bool = True,
    features: RandomFeatures | None = None,
    steps: int | None = None,
    callback=None,
) -> tuple[EditOffset, list[dict]]:
    """Shared Adam loop behind invert / edit / transfer.

    Minimizes lambda_sem * MSE(S', S) + lambda_im * MSE(I', I) +
    lambda_vgg * perceptual(I', I), the image terms restricted to the keep
    region when one is set. Returns the best-seen offsets (non-finite losses
    stop early) and the per-iteration trace.
    """
    steps = opts.steps if steps is None else steps
    features = features or RandomFeatures()
    offset = (initial or zero_offsets(pivot)).clone()
    params = list(offset.geo.tensors())
    if optimize_appearance:
        for f in offset.app:
            params.extend(f.tensors())
    for p in params:
        p.requires_grad_(True)
    optimizer = torch.optim.Adam(params, lr=opts.lr)

    keep = None if problem.region is None else 1.0 - problem.region
    num_groups = gen.cfg.model.num_groups
    trace: list[dict] = []
    best_loss = math.inf
    best = offset.detach().clone()

    for step in range(steps + 1):
        out = render_offset(gen, pivot, offset, problem.pose)
        rgb = out.rgb[0]
        sem = out.sem_probs_group[0]
        loss_sem = torch.mean((sem - problem.mask_probs) ** 2)
        loss_im = _masked_mse(rgb, problem.image, keep)
        if opts.lambda_vgg > 0:
            if keep is None:
                loss_vgg = perceptual_loss(features, rgb, problem.image)
            else:
                keep3 = keep.unsqueeze(-1)
                loss_vgg = perceptual_loss(features, rgb * keep3, problem.image * keep3)
        else:
            loss_vgg = torch.zeros(())
        loss = (
            opts.lambda_sem * loss_sem + opts.lambda_im * loss_im + opts.lambda_vgg * loss_vgg
        )

        labels = out.labels[0].cpu().numpy()
        _, mean_iou = miou(labels, problem.mask_labels, num_groups)
        record = {
            "iter": step,
            "loss": float(loss.detach()),
            "loss_sem": float(loss_sem.detach()),
            "loss_im": float(loss_im.detach()),
            "loss_vgg": float(loss_vgg.detach()),
            "miou": mean_iou,
        }
        trace.append(record)
        if callback is not None:
            callback(step, steps, record)

        if not torch.isfinite(loss):
            break
        if float(loss.detach()) < best_loss:
            best_loss = float(loss.detach())
            best = offset.detach().clone()
        if step == steps:
            break
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

    return best, trace


def invert(
    gen: Generator,
    pivot: PivotLatent,
    target_image: np.ndarray,
    target_mask: np.ndarray,
    pose: CameraPose,
    opts: InversionConfig | None = None,
    optimize_appearance: bool = True,
    steps: int | None = None,
    callback=None,
) -> tuple[EditOffset, list[dict]]:
    """Invert a (image, group mask, pose) target starting from the pivot."""
    opts = opts or gen.cfg.training.inversion
    problem = InversionProblem.from_arrays(
        target_image, target_mask, pose, gen.cfg.model.num_groups
    )
    return optimize_offsets(
        gen, pivot, problem, opts,
        optimize_appearance=optimize_appearance, steps=steps, callback=callback,
    )


def edit(
    gen: Generator,
    pivot: PivotLatent,
    inverted: EditOffset,
    original_image: np.ndarray,
    original_mask: np.ndarray,
    edited_mask: np.ndarray,
    pose: CameraPose,
    region: np.ndarray | None = None,
    opts: InversionConfig | None = None,
    steps: int | None = None,
    callback=None,
) -> tuple[EditOffset, list[dict]]:
    """Re-optimize offsets so semantics match the edited mask.

    Image terms apply only outside the altered region; the region defaults to
    the pixels whose labels changed between the original and edited masks. An
    unchanged mask is a no-op returning the input offsets.
    """
    original_mask = np.asarray(original_mask)
    edited_mask = np.asarray(edited_mask)
    if region is None:
        region = (original_mask != edited_mask).astype(np.float32)
    if not region.any() and np.array_equal(original_mask, edited_mask):
        return inverted.clone(), []
    opts = opts or gen.cfg.training.inversion
    problem = InversionProblem.from_arrays(
        original_image, edited_mask, pose, gen.cfg.model.num_groups, region=region
    )
    return optimize_offsets(
        gen, pivot, problem, opts, initial=inverted, steps=steps, callback=callback
    )


def swap_appearance(offsets: EditOffset, other: EditOffset, group: int) -> EditOffset:
    """Appearance transfer: adopt ``other``'s offsets for one group, no optimization."""
    if not 0 <= group < len(offsets.app):
        raise IndexError(f"group {group} outside [0, {len(offsets.app)})")
    out = offsets.clone()
    out.app[group] = other.app[group].clone()
    return out


def transfer_geometry(
    gen: Generator,
    pivot: PivotLatent,
    source: EditOffset,
    source_image: np.ndarray,
    source_mask: np.ndarray,
    target_image: np.ndarray,
    target_mask: np.ndarray,
    group: int,
    pose: CameraPose,
    opts: InversionConfig | None = None,
    steps: int | None = None,
    callback=None,
) -> tuple[EditOffset, list[dict], np.ndarray]:
    """Optimize geometry offsets toward composite semantic and image targets.

    The region mask comes from the target's semantics for ``group``; inside it
    the target supplies supervision, outside the source does. Appearance
    offsets are held fixed. Returns (offsets, trace, region_mask); an empty
    region is a no-op.
    """
    target_mask = np.asarray(target_mask)
    source_mask = np.asarray(source_mask)
    region = (target_mask == group).astype(np.float32)
    if not region.any():
        return source.clone(), [], region
    opts = opts or gen.cfg.training.inversion
    r3 = region[..., None]
    composite_image = np.asarray(source_image) * (1 - r3) + np.asarray(target_image) * r3
    composite_mask = np.where(region > 0, target_mask, source_mask)
    problem = InversionProblem.from_arrays(
        composite_image.astype(np.float32), composite_mask, pose, gen.cfg.model.num_groups
    )
    offsets, trace = optimize_offsets(
        gen, pivot, problem, opts, initial=source,
        optimize_appearance=False, steps=steps, callback=callback,
    )
    return offsets, trace, region


# --- serialization -----------------------------------------------------------


def _film_tensors(film: FilmParams, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, (g, b) in enumerate(zip(film.gammas, film.betas)):
        out[f"{prefix}.gamma.{i}"] = g.detach().cpu().numpy()
        out[f"{prefix}.beta.{i}"] = b.detach().cpu().numpy()
    return out


def _film_from_tensors(tensors: dict[str, np.ndarray], prefix: str) -> FilmParams:
    gammas, betas = [], []
    i = 0
    while f"{prefix}.gamma.{i}" in tensors:
        gammas.append(torch.from_numpy(tensors[f"{prefix}.gamma.{i}"]))
        betas.append(torch.from_numpy(tensors[f"{prefix}.beta.{i}"]))
        i += 1
    if not gammas:
        raise ValueError(f"no FiLM tensors under prefix '{prefix}'")
    return FilmParams(gammas, betas)


def save_pivot(path, pivot: PivotLatent, meta: dict | None = None) -> None:
    tensors = _film_tensors(pivot.geo, "geo")
    for g, film in enumerate(pivot.app):
        tensors.update(_film_tensors(film, f"app.{g}"))
    save_container(path, tensors, {"kind": "pivot", "groups": len(pivot.app), **(meta or {})})


def load_pivot(path) -> tuple[PivotLatent, dict]:
    tensors, meta = load_container(path)
    groups = int(meta["groups"])
    pivot = PivotLatent(
        geo=_film_from_tensors(tensors, "geo"),
        app=[_film_from_tensors(tensors, f"app.{g}") for g in range(groups)],
    )
    return pivot, meta


def save_offsets(path, offsets: EditOffset, meta: dict | None = None) -> None:
    tensors = _film_tensors(offsets.geo, "geo")
    for g, film in enumerate(offsets.app):
        tensors.update(_film_tensors(film, f"app.{g}"))
    save_container(path, tensors, {"kind": "offsets", "groups": len(offsets.app), **(meta or {})})


def load_offsets(path) -> tuple[EditOffset, dict]:
    tensors, meta = load_container(path)
    groups = int(meta["groups"])
    offsets = EditOffset(
        geo=_film_from_tensors(tensors, "geo"),
        app=[_film_from_tensors(tensors, f"app.{g}") for g in range(groups)],
    )
    return offsets, meta
