"""Command-line entry points mirroring the service for offline use.

stdout carries human-readable text; stderr carries one machine-readable JSON
diagnostic object on failure. Exit codes: 0 ok, 2 config error, 3
runtime/numerical error, 4 I/O error. Every command takes --seed and is
deterministic given its flags.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import invedit, metrics as metrics_mod
from .checkpoint import load_generator
from .config import TrainConfig, load_config
from .core import CameraPose, sample_latent
from .data import club_mask, load_dataset, synth_generate
from .errors import ConfigError, DataError, NumericalError, SfeError
from .rawio import load_labels_png, load_rgb_png, load_raw_f32, save_labels_png, save_rgb_png
from .render import render_frame
from .train import run_training


def _fail(exc: Exception, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "layer", "path"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    print(json.dumps(payload), file=sys.stderr)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(exc, 2)
        except NumericalError as exc:
            _fail(exc, 3)
        except (DataError, OSError) as exc:
            _fail(exc, 4)
        except SfeError as exc:
            _fail(exc, 3)

    return wrapper


def _load_cfg(path: str | None) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _pose(pitch: float, yaw: float, roll: float) -> CameraPose:
    try:
        return CameraPose(pitch, yaw, roll)
    except ValueError as exc:
        raise ConfigError(str(exc), key="pose") from exc


@click.group()
def main():
    """Semantic field editing: train, render, invert, edit, transfer."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config file")
@click.option("--resume", type=click.Path(exists=True), help="training checkpoint to resume")
@click.option("--out", "out_dir", type=click.Path(), default="runs/train", show_default=True)
@click.option("--data", "data_root", type=click.Path(), help="real dataset root (default: synthetic)")
@click.option("--seed", type=int, default=None, help="override training seed")
@handle_errors
def train(config_path, resume, out_dir, data_root, seed):
    """Run the two-stage schedule, writing checkpoints and metrics."""
    cfg = _load_cfg(config_path)
    if seed is not None:
        cfg.training.seed = seed
    dataset = load_dataset(data_root) if data_root else synth_generate(cfg)
    if resume:
        from .train import load_train_state

        state, finished = load_train_state(resume)
        if finished or state.iteration >= state.total_steps:
            click.echo("nothing to do: run already finished")
            return
    final = run_training(cfg, dataset, out_dir, resume=resume)
    click.echo(f"final checkpoint: {final}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", "out_prefix", type=click.Path(), default="render", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pitch", type=float, default=0.0)
@click.option("--yaw", type=float, default=0.0)
@click.option("--roll", type=float, default=0.0)
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@handle_errors
def render(checkpoint, out_prefix, seed, pitch, yaw, roll, width, height):
    """Render one frame from seeded latents."""
    gen, cfg, _ = load_generator(checkpoint)
    z = sample_latent(torch.Generator().manual_seed(seed), cfg.model.latent_dim)
    z_i = sample_latent(
        torch.Generator().manual_seed(seed + 1), cfg.model.latent_dim, count=cfg.model.num_groups
    )
    frame = render_frame(gen, z, z_i, _pose(pitch, yaw, roll), width, height)
    out = Path(out_prefix)
    paths = frame.save(out.parent if out.parent != Path("") else Path("."), out.name)
    for kind, path in paths.items():
        click.echo(f"{kind}: {path}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", required=True, type=click.Path(exists=True), help="target RGB PNG")
@click.option("--mask", required=True, type=click.Path(exists=True), help="target label PNG")
@click.option("--out", "out_dir", type=click.Path(), default="runs/invert", show_default=True)
@click.option("--pitch", type=float, default=0.0)
@click.option("--yaw", type=float, default=0.0)
@click.option("--roll", type=float, default=0.0)
@click.option("--steps", type=int, default=None, help="override the configured budget")
@click.option("--seed", type=int, default=0, show_default=True, help="pivot sampling seed")
@click.option("--pivot-samples", type=int, default=10000, show_default=True)
@click.option("--geometry-only", is_flag=True, help="keep appearance offsets fixed")
@handle_errors
def invert(checkpoint, image, mask, out_dir, pitch, yaw, roll, steps, seed,
           pivot_samples, geometry_only):
    """Invert a target (image, mask, pose) into pivot offsets."""
    gen, cfg, _ = load_generator(checkpoint)
    target_image = load_rgb_png(image)
    target_mask = load_labels_png(mask)
    if target_mask.max() >= cfg.model.num_groups:
        target_mask = club_mask(target_mask, cfg.model.clubbing)
    pose = _pose(pitch, yaw, roll)
    pivot = invedit.compute_pivot(gen, sample_count=pivot_samples, seed=seed)
    offsets, trace = invedit.invert(
        gen, pivot, target_image, target_mask, pose,
        optimize_appearance=not geometry_only, steps=steps,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    invedit.save_pivot(out / "pivot.sfe", pivot, {"checkpoint": str(checkpoint)})
    invedit.save_offsets(
        out / "offsets.sfe", offsets,
        {"checkpoint": str(checkpoint), "pose": [pose.pitch, pose.yaw, pose.roll]},
    )
    (out / "trace.ndjson").write_text(
        "".join(json.dumps(r) + "\n" for r in trace), encoding="utf-8"
    )
    final = invedit.render_offset(gen, pivot, offsets, pose)
    save_rgb_png(final.rgb[0].detach().numpy(), out / "render.png")
    save_labels_png(final.labels[0].numpy(), out / "labels.png")
    click.echo(f"final mIoU: {trace[-1]['miou']:.4f}")
    click.echo(f"offsets: {out / 'offsets.sfe'}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--inversion", required=True, type=click.Path(exists=True),
              help="directory produced by `sfe invert`")
@click.option("--edited-mask", required=True, type=click.Path(exists=True))
@click.option("--region", type=click.Path(exists=True), help="explicit region PNG (nonzero = editable)")
@click.option("--out", "out_dir", type=click.Path(), default="runs/edit", show_default=True)
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def edit(checkpoint, inversion, edited_mask, region, out_dir, steps, seed):
    """Re-optimize an inversion toward an edited semantic mask."""
    gen, cfg, _ = load_generator(checkpoint)
    inv_dir = Path(inversion)
    offsets, meta = invedit.load_offsets(inv_dir / "offsets.sfe")
    pivot, _ = invedit.load_pivot(inv_dir / "pivot.sfe")
    pose = CameraPose(*meta["pose"])
    original_image = load_rgb_png(inv_dir / "render.png")
    original_mask = load_labels_png(inv_dir / "labels.png")
    edited = load_labels_png(edited_mask)
    region_arr = None
    if region:
        region_arr = (load_labels_png(region) > 0).astype(np.float32)
    new_offsets, trace = invedit.edit(
        gen, pivot, offsets, original_image, original_mask, edited, pose,
        region=region_arr, steps=steps,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    invedit.save_pivot(out / "pivot.sfe", pivot, dict(meta))
    invedit.save_offsets(out / "offsets.sfe", new_offsets, dict(meta))
    after = invedit.render_offset(gen, pivot, new_offsets, pose)
    save_rgb_png(after.rgb[0].detach().numpy(), out / "render.png")
    save_labels_png(after.labels[0].numpy(), out / "labels.png")
    changed = int((after.labels[0].numpy() != original_mask).sum())
    click.echo(f"changed pixels: {changed}")
    if trace:
        click.echo(f"final mIoU vs edited mask: {trace[-1]['miou']:.4f}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--source", required=True, type=click.Path(exists=True),
              help="source inversion directory")
@click.option("--target", required=True, type=click.Path(exists=True),
              help="target inversion directory")
@click.option("--semantic", required=True, type=int, help="group index to transfer")
@click.option("--mode", type=click.Choice(["geometry", "appearance"]), default="geometry",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="runs/transfer", show_default=True)
@click.option("--steps", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def transfer(checkpoint, source, target, semantic, mode, out_dir, steps, seed):
    """Transfer one semantic's appearance or geometry between inversions."""
    gen, cfg, _ = load_generator(checkpoint)
    if not 0 <= semantic < cfg.model.num_groups:
        raise ConfigError(f"semantic must be < {cfg.model.num_groups}", key="semantic")
    src_dir, tgt_dir = Path(source), Path(target)
    src_off, src_meta = invedit.load_offsets(src_dir / "offsets.sfe")
    tgt_off, _ = invedit.load_offsets(tgt_dir / "offsets.sfe")
    pivot, _ = invedit.load_pivot(src_dir / "pivot.sfe")
    pose = CameraPose(*src_meta["pose"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if mode == "appearance":
        new_offsets = invedit.swap_appearance(src_off, tgt_off, semantic)
    else:
        src_img = load_rgb_png(src_dir / "render.png")
        src_mask = load_labels_png(src_dir / "labels.png")
        tgt_img = load_rgb_png(tgt_dir / "render.png")
        tgt_mask = load_labels_png(tgt_dir / "labels.png")
        new_offsets, trace, region = invedit.transfer_geometry(
            gen, pivot, src_off, src_img, src_mask, tgt_img, tgt_mask,
            semantic, pose, steps=steps,
        )
        if not region.any():
            click.echo(f"warning: semantic {semantic} is empty in the target; no-op")
    invedit.save_pivot(out / "pivot.sfe", pivot, dict(src_meta))
    invedit.save_offsets(out / "offsets.sfe", new_offsets, dict(src_meta))
    result = invedit.render_offset(gen, pivot, new_offsets, pose)
    save_rgb_png(result.rgb[0].detach().numpy(), out / "render.png")
    save_labels_png(result.labels[0].numpy(), out / "labels.png")
    click.echo(f"result: {out / 'render.png'}")


def _load_embeddings(path: str) -> np.ndarray:
    p = Path(path)
    if p.is_dir():
        images = [load_rgb_png(f) for f in sorted(p.glob("*.png"))]
        if not images:
            raise DataError(f"no PNG images under {p}", path=str(p))
        return metrics_mod.downsample_embedder(np.stack(images))
    return load_raw_f32(p).astype(np.float64)


@main.command()
@click.option("--a", "path_a", required=True, type=click.Path(exists=True),
              help="embedding file (.f32 + sidecar) or PNG directory")
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--kid/--no-kid", "with_kid", default=True, show_default=True)
@click.option("--subset-size", type=int, default=None, help="KID subset size")
@click.option("--subsets", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def metrics(path_a, path_b, with_kid, subset_size, subsets, seed):
    """FID (and KID) between two embedding sets or image directories."""
    a = _load_embeddings(path_a)
    b = _load_embeddings(path_b)
    try:
        result = metrics_mod.fid(a, b)
        out = {"fid": result.value, "fid_jitter": result.jitter_applied}
        if with_kid:
            size = subset_size or min(a.shape[0], b.shape[0], 100)
            out["kid"] = metrics_mod.kid(a, b, subset_size=size, subsets=subsets, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    click.echo(json.dumps(out))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", type=int, default=None, help="override record count")
@click.option("--seed", type=int, default=None)
@handle_errors
def synth(config_path, out_dir, count, seed):
    """Generate the synthetic dataset and write the directory layout."""
    cfg = _load_cfg(config_path)
    if count is not None:
        cfg.data.synthetic.count = count
    dataset = synth_generate(cfg, seed=seed)
    dataset.save(out_dir)
    click.echo(f"wrote {len(dataset)} records to {out_dir}")


@main.command()
@click.option("--data-dir", default=None, help="defaults to $SFE_DATA_DIR or ./sfe_data")
@click.option("--port", type=int, default=None, help="defaults to $SFE_PORT or 8777")
@click.option("--ui", "ui_dir", type=click.Path(), default=None,
              help="static UI bundle directory")
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def serve(data_dir, port, ui_dir, seed):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    data_dir = data_dir or os.environ.get("SFE_DATA_DIR", "sfe_data")
    port = port or int(os.environ.get("SFE_PORT", "8777"))
    if ui_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = str(bundled) if bundled.is_dir() else None
    app = create_app(data_dir, ui_dir=ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port)


if __name__ == "__main__":
    main()
