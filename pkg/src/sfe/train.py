"""Two-stage adversarial training.

Stage 1 trains the whole generator against two discriminators: D_c scores
RGB frames and regresses the camera pose, D_s scores semantic probability
maps and regresses the geometry latent. Both use the non-saturating softplus
loss with R1 gradient penalties on real samples (weighted by lambda_im for
images and lambda_sem for semantics). Stage 2 freezes the manifold field and
geometry network and fine-tunes the appearance path against D_c only.

The pose head trains on real images toward dataset poses (discriminator
update) and on fakes toward the sampled pose (both players); the latent head
is symmetric on fake semantic maps. Training state checkpoints are exact:
parameters, Adam moments and the sampling RNG stream all round-trip, so a
resumed step equals the uninterrupted one.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import (
    load_container,
    load_module_tensors,
    module_tensors,
    save_container,
)
from .config import TrainConfig, config_from_dict, config_to_dict
from .core import CameraPose, sample_latent, sample_pose
from .data import FaceDataset
from .errors import ConfigError, DataError, NumericalError
from .rawio import save_rgb_png
from .render import Generator, render_batch_latents


def softplus_loss(x: torch.Tensor) -> torch.Tensor:
    """f(x) = log(1 + exp(x)), the non-saturating GAN loss primitive."""
    return F.softplus(x)


class Discriminator(nn.Module):
    """Strided conv stack with a real/fake score head and one auxiliary head."""

    def __init__(self, in_channels: int, resolution: int, aux_dim: int, base_width: int = 64):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ConfigError(f"discriminator resolution must be a power of two >= 8, got {resolution}")
        downs = int(math.log2(resolution)) - 2
        layers = []
        ch = in_channels
        width = base_width
        for _ in range(downs):
            layers.append(nn.Conv2d(ch, width, kernel_size=4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2))
            ch = width
            width = min(width * 2, 256)
        self.trunk = nn.Sequential(*layers)
        feat_dim = ch * 4 * 4
        self.score_head = nn.Linear(feat_dim, 1)
        self.aux_head = nn.Linear(feat_dim, aux_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(x * 2.0 - 1.0).flatten(1)
        return self.score_head(h).squeeze(-1), self.aux_head(h)


def r1_penalty(disc: Discriminator, real: torch.Tensor) -> torch.Tensor:
    """Squared gradient norm of the score at real inputs."""
    real = real.detach().requires_grad_(True)
    score, _ = disc(real)
    (grad,) = torch.autograd.grad(score.sum(), real, create_graph=True)
    return grad.flatten(1).pow(2).sum(dim=1).mean()


def d_losses(
    disc_c: Discriminator,
    disc_s: Discriminator,
    real_imgs: torch.Tensor,
    real_sems: torch.Tensor,
    real_poses: torch.Tensor | None,
    fake_imgs: torch.Tensor,
    fake_sems: torch.Tensor,
    fake_poses: torch.Tensor,
    fake_z: torch.Tensor,
    cfg: TrainConfig,
    stage: int,
) -> dict[str, torch.Tensor]:
    """Discriminator loss terms for one batch; fakes must be detached."""
    if real_poses is None:
        raise DataError("dataset records are missing pose annotations")
    t = cfg.training
    score_real_c, pose_real = disc_c(real_imgs)
    score_fake_c, pose_fake = disc_c(fake_imgs)
    lambda_im = t.lambda_im if stage == 1 else t.stage2_lambda_im

    terms = {
        "adv_real_c": softplus_loss(-score_real_c).mean(),
        "adv_fake_c": softplus_loss(score_fake_c).mean(),
        "r1_c": lambda_im * r1_penalty(disc_c, real_imgs),
        "pose_mse": t.lambda_pose
        * (
            F.mse_loss(pose_real, real_poses)
            + F.mse_loss(pose_fake, fake_poses)
        ),
    }
    if stage == 1:
        score_real_s, _ = disc_s(real_sems)
        score_fake_s, latent_fake = disc_s(fake_sems)
        terms["adv_real_s"] = softplus_loss(-score_real_s).mean()
        terms["adv_fake_s"] = softplus_loss(score_fake_s).mean()
        terms["r1_s"] = t.lambda_sem * r1_penalty(disc_s, real_sems)
        terms["latent_mse"] = t.lambda_latent * F.mse_loss(latent_fake, fake_z)
    terms["total"] = sum(terms.values())
    return terms


def g_losses(
    disc_c: Discriminator,
    disc_s: Discriminator,
    fake_imgs: torch.Tensor,
    fake_sems: torch.Tensor,
    poses: torch.Tensor,
    z: torch.Tensor,
    cfg: TrainConfig,
    stage: int,
) -> dict[str, torch.Tensor]:
    """Generator loss terms; fakes must carry the generator graph."""
    t = cfg.training
    score_c, pose_pred = disc_c(fake_imgs)
    terms = {
        "adv_c": softplus_loss(-score_c).mean(),
        "pose_mse": t.lambda_pose * F.mse_loss(pose_pred, poses),
    }
    if stage == 1:
        score_s, latent_pred = disc_s(fake_sems)
        terms["adv_s"] = softplus_loss(-score_s).mean()
        terms["latent_mse"] = t.lambda_latent * F.mse_loss(latent_pred, z)
    terms["total"] = sum(terms.values())
    return terms


@dataclass
class TrainState:
    cfg: TrainConfig
    generator: Generator
    disc_c: Discriminator
    disc_s: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    iteration: int = 0
    stage: int = 1

    @property
    def total_steps(self) -> int:
        return self.cfg.training.stage1_steps + self.cfg.training.stage2_steps


def _make_optimizers(state_cfg: TrainConfig, gen: Generator, disc_c, disc_s, stage: int):
    t = state_cfg.training
    betas = (t.adam_beta1, t.adam_beta2)
    if stage == 1:
        g_params = list(gen.parameters())
        d_params = list(disc_c.parameters()) + list(disc_s.parameters())
    else:
        g_params = list(gen.appearance_parameters())
        d_params = list(disc_c.parameters())
    opt_g = torch.optim.Adam(g_params, lr=t.lr_generator, betas=betas)
    opt_d = torch.optim.Adam(d_params, lr=t.lr_discriminator, betas=betas)
    return opt_g, opt_d


def init_train_state(cfg: TrainConfig, seed: int | None = None) -> TrainState:
    seed = cfg.training.seed if seed is None else seed
    torch.manual_seed(seed)
    gen = Generator(cfg)
    disc_c = Discriminator(3, cfg.render.width, aux_dim=3)
    disc_s = Discriminator(cfg.model.num_classes, cfg.render.width, aux_dim=cfg.model.latent_dim)
    rng = torch.Generator().manual_seed(seed + 1)
    opt_g, opt_d = _make_optimizers(cfg, gen, disc_c, disc_s, stage=1)
    return TrainState(cfg, gen, disc_c, disc_s, opt_g, opt_d, rng)


def enter_stage2(state: TrainState) -> None:
    """Freeze geometry and manifold parameters and rebuild optimizer slots."""
    for p in state.generator.geometry_parameters():
        p.requires_grad_(False)
    state.opt_g, state.opt_d = _make_optimizers(
        state.cfg, state.generator, state.disc_c, state.disc_s, stage=2
    )
    state.stage = 2


def _collate(dataset: FaceDataset, indices: list[int], num_classes: int):
    imgs, sems, poses = [], [], []
    for i in indices:
        rec = dataset[i]
        imgs.append(torch.from_numpy(np.ascontiguousarray(rec.image)).float())
        mask = torch.from_numpy(np.ascontiguousarray(rec.mask))
        sems.append(F.one_hot(mask, num_classes).float())
        poses.append(rec.pose.as_tensor())
    return (
        torch.stack(imgs).permute(0, 3, 1, 2),
        torch.stack(sems).permute(0, 3, 1, 2),
        torch.stack(poses),
    )


def _sample_batch_inputs(state: TrainState, batch_size: int):
    cfg = state.cfg
    z = sample_latent(state.rng, cfg.model.latent_dim, count=batch_size)
    z_groups = sample_latent(
        state.rng, cfg.model.latent_dim, count=batch_size * cfg.model.num_groups
    ).reshape(batch_size, cfg.model.num_groups, cfg.model.latent_dim)
    poses = [sample_pose(state.rng, cfg.training.pose_prior) for _ in range(batch_size)]
    pose_tensor = torch.stack([p.as_tensor() for p in poses])
    return z, z_groups, poses, pose_tensor


def train_step(state: TrainState, dataset: FaceDataset) -> dict[str, float]:
    """One alternating discriminator-then-generator update."""
    cfg = state.cfg
    batch_size = cfg.training.batch_size
    if len(dataset) == 0:
        raise DataError("training dataset is empty")

    indices = torch.randint(
        len(dataset), (batch_size,), generator=state.rng
    ).tolist()
    real_imgs, real_sems, real_poses = _collate(dataset, indices, cfg.model.num_classes)

    # one generator forward serves both updates: the discriminator sees the
    # fakes detached, the generator update reuses the live graph afterwards
    z, z_groups, poses, pose_tensor = _sample_batch_inputs(state, batch_size)
    fake = render_batch_latents(state.generator, z, z_groups, poses)
    fake_imgs = fake.rgb.permute(0, 3, 1, 2)
    fake_sems = fake.sem_probs_fine.permute(0, 3, 1, 2)

    d_terms = d_losses(
        state.disc_c,
        state.disc_s,
        real_imgs,
        real_sems,
        real_poses,
        fake_imgs.detach(),
        fake_sems.detach(),
        pose_tensor,
        z,
        cfg,
        state.stage,
    )
    if not torch.isfinite(d_terms["total"]):
        raise NumericalError(f"non-finite discriminator loss at iteration {state.iteration}")
    state.opt_d.zero_grad(set_to_none=True)
    d_terms["total"].backward()
    state.opt_d.step()

    g_terms = g_losses(
        state.disc_c, state.disc_s, fake_imgs, fake_sems, pose_tensor, z, cfg, state.stage
    )
    if not torch.isfinite(g_terms["total"]):
        raise NumericalError(f"non-finite generator loss at iteration {state.iteration}")
    state.opt_g.zero_grad(set_to_none=True)
    g_terms["total"].backward()
    state.opt_g.step()

    state.iteration += 1
    r1 = d_terms["r1_c"] + d_terms.get("r1_s", torch.tensor(0.0))
    return {
        "iter": state.iteration,
        "stage": state.stage,
        "loss_d": d_terms["total"].detach().item(),
        "loss_g": g_terms["total"].detach().item(),
        "r1": r1.detach().item(),
        "pose_mse": d_terms["pose_mse"].detach().item(),
        "latent_mse": float(d_terms["latent_mse"].detach()) if "latent_mse" in d_terms else 0.0,
    }


# --- persistence -------------------------------------------------------------


def _optimizer_tensors(opt, named: list[tuple[str, torch.Tensor]], prefix: str):
    tensors = {}
    steps = {}
    for name, param in named:
        st = opt.state.get(param)
        if not st:
            continue
        tensors[f"{prefix}.{name}.m"] = st["exp_avg"].detach().cpu().numpy()
        tensors[f"{prefix}.{name}.v"] = st["exp_avg_sq"].detach().cpu().numpy()
        steps[name] = float(st["step"])
    return tensors, steps


def save_train_state(path: str | Path, state: TrainState, finished: bool = False) -> None:
    tensors = {}
    tensors.update(module_tensors(state.generator, "gen"))
    tensors.update(module_tensors(state.disc_c, "disc_c"))
    tensors.update(module_tensors(state.disc_s, "disc_s"))

    g_named = _trainable_named(state, "g")
    d_named = _trainable_named(state, "d")
    opt_g_tensors, opt_g_steps = _optimizer_tensors(state.opt_g, g_named, "optg")
    opt_d_tensors, opt_d_steps = _optimizer_tensors(state.opt_d, d_named, "optd")
    tensors.update(opt_g_tensors)
    tensors.update(opt_d_tensors)

    rng_state = base64.b64encode(state.rng.get_state().numpy().tobytes()).decode("ascii")
    meta = {
        "kind": "train",
        "config": config_to_dict(state.cfg),
        "iteration": state.iteration,
        "stage": state.stage,
        "finished": finished,
        "rng": rng_state,
        "opt_steps": {"g": opt_g_steps, "d": opt_d_steps},
    }
    save_container(path, tensors, meta)


def _trainable_named(state: TrainState, which: str) -> list[tuple[str, torch.Tensor]]:
    if which == "g":
        if state.stage == 1:
            return [(f"gen.{n}", p) for n, p in state.generator.named_parameters()]
        names = {id(p): f"gen.{n}" for n, p in state.generator.named_parameters()}
        return [(names[id(p)], p) for p in state.generator.appearance_parameters()]
    if state.stage == 1:
        return [(f"disc_c.{n}", p) for n, p in state.disc_c.named_parameters()] + [
            (f"disc_s.{n}", p) for n, p in state.disc_s.named_parameters()
        ]
    return [(f"disc_c.{n}", p) for n, p in state.disc_c.named_parameters()]


def load_train_state(path: str | Path) -> tuple[TrainState, bool]:
    """Rebuild an exact training state; returns (state, finished)."""
    tensors, meta = load_container(path)
    if meta.get("kind") != "train":
        raise DataError(f"{path} is not a training checkpoint")
    cfg = config_from_dict(meta["config"])
    state = init_train_state(cfg)
    load_module_tensors(state.generator, tensors, "gen")
    load_module_tensors(state.disc_c, tensors, "disc_c")
    load_module_tensors(state.disc_s, tensors, "disc_s")
    state.iteration = int(meta["iteration"])
    if int(meta["stage"]) == 2:
        enter_stage2(state)

    rng_bytes = base64.b64decode(meta["rng"])
    state.rng.set_state(torch.frombuffer(bytearray(rng_bytes), dtype=torch.uint8).clone())

    for which, opt in (("g", state.opt_g), ("d", state.opt_d)):
        steps = meta["opt_steps"][which]
        prefix = "optg" if which == "g" else "optd"
        for name, param in _trainable_named(state, which):
            if name not in steps:
                continue
            opt.state[param] = {
                "step": torch.tensor(steps[name]),
                "exp_avg": torch.from_numpy(tensors[f"{prefix}.{name}.m"]).clone(),
                "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}.{name}.v"]).clone(),
            }
    return state, bool(meta.get("finished", False))


def _sample_grid(state: TrainState, out_path: Path, count: int = 4) -> None:
    cfg = state.cfg
    rng = torch.Generator().manual_seed(1234)
    z = sample_latent(rng, cfg.model.latent_dim, count=count)
    z_groups = sample_latent(rng, cfg.model.latent_dim, count=count * cfg.model.num_groups)
    z_groups = z_groups.reshape(count, cfg.model.num_groups, cfg.model.latent_dim)
    poses = [CameraPose(0.0, 0.0)] * count
    with torch.no_grad():
        out = render_batch_latents(state.generator, z, z_groups, poses)
    frames = out.rgb.cpu().numpy()
    grid = np.concatenate(list(frames), axis=1)
    save_rgb_png(grid, out_path)


def run_training(
    cfg: TrainConfig,
    dataset: FaceDataset,
    out_dir: str | Path,
    resume: str | Path | None = None,
    log_every: int = 10,
    progress: "callable | None" = None,
) -> Path:
    """Run (or resume) the two-stage schedule; returns the final checkpoint path.

    Writes periodic checkpoints, a sample-render grid, and newline-delimited
    JSON metrics records to ``out_dir``. Raises NumericalError after saving
    the last finite state if a loss goes non-finite.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state, finished = load_train_state(resume)
        if finished or state.iteration >= state.total_steps:
            return Path(resume)
    else:
        state = init_train_state(cfg)

    metrics_path = out_dir / "metrics.ndjson"
    final_path = out_dir / "ckpt_final.sfe"
    with open(metrics_path, "a", encoding="utf-8") as metrics_fh:
        while state.iteration < state.total_steps:
            if state.stage == 1 and state.iteration >= cfg.training.stage1_steps:
                enter_stage2(state)
            try:
                metrics = train_step(state, dataset)
            except NumericalError:
                save_train_state(out_dir / "ckpt_aborted.sfe", state)
                raise
            if metrics["iter"] % log_every == 0 or metrics["iter"] == state.total_steps:
                metrics_fh.write(json.dumps(metrics) + "\n")
                metrics_fh.flush()
            if progress is not None:
                progress(state.iteration, state.total_steps)
            if metrics["iter"] % cfg.training.checkpoint_every == 0:
                save_train_state(out_dir / f"ckpt_{metrics['iter']:06d}.sfe", state)
                _sample_grid(state, out_dir / f"samples_{metrics['iter']:06d}.png")
    save_train_state(final_path, state, finished=True)
    return final_path
