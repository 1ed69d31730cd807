"""Core domain types and random sampling of latents and camera poses.

Latent codes are plain 1-D float tensors of length ``latent_dim``; camera
poses are (pitch, yaw, roll) Euler angles on a fixed-radius orbit looking at
the origin, with +y up. All sampling is driven by an explicit
``torch.Generator`` so results are reproducible from (seed, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import PosePrior
from .errors import ConfigError

PITCH_RANGE = (-math.pi / 2, math.pi / 2)
YAW_RANGE = (-math.pi, math.pi)


@dataclass(frozen=True)
class CameraPose:
    """Orbit camera orientation; radius and field of view come from config."""

    pitch: float
    yaw: float
    roll: float = 0.0

    def __post_init__(self):
        if not (PITCH_RANGE[0] <= self.pitch <= PITCH_RANGE[1]):
            raise ValueError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        if not (YAW_RANGE[0] <= self.yaw <= YAW_RANGE[1]):
            raise ValueError(f"yaw {self.yaw} outside [-pi, pi]")

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor([self.pitch, self.yaw, self.roll], dtype=dtype)


@dataclass
class RayBundle:
    """A batch of rays: unit directions from a shared origin on the orbit."""

    origins: torch.Tensor     # [R, 3]
    directions: torch.Tensor  # [R, 3], unit norm
    near: float
    far: float

    def __post_init__(self):
        if self.origins.shape != self.directions.shape:
            raise ValueError("origins and directions must have matching shapes")
        if not self.near < self.far:
            raise ValueError("near must be < far")

    @property
    def count(self) -> int:
        return self.origins.shape[0]


def sample_latent(
    rng: torch.Generator,
    dim: int,
    *,
    count: int | None = None,
    dtype=torch.float32,
) -> torch.Tensor:
    """Draw i.i.d. standard-normal latent codes.

    Returns a [dim] vector, or [count, dim] when ``count`` is given.
    """
    if dim < 1:
        raise ConfigError(f"latent dimension must be >= 1 (got {dim})", key="model.latent_dim")
    shape = (dim,) if count is None else (count, dim)
    return torch.randn(shape, generator=rng, dtype=dtype)


def sample_pose(rng: torch.Generator, prior: PosePrior) -> CameraPose:
    """Draw a pose from the Gaussian prior, clamped to the valid ranges.

    Clamping (rather than rejection) keeps the draw count deterministic.
    """
    draws = torch.randn(3, generator=rng, dtype=torch.float64)
    pitch = prior.pitch_mean + prior.pitch_std * draws[0].item()
    yaw = prior.yaw_mean + prior.yaw_std * draws[1].item()
    roll = prior.roll_mean + prior.roll_std * draws[2].item()
    pitch = min(max(pitch, PITCH_RANGE[0]), PITCH_RANGE[1])
    yaw = min(max(yaw, YAW_RANGE[0]), YAW_RANGE[1])
    return CameraPose(pitch=pitch, yaw=yaw, roll=roll)


def camera_rotation(pose: CameraPose, dtype=torch.float32) -> torch.Tensor:
    """World-from-camera rotation for an orbit camera.

    The camera sits at R @ (0, 0, radius) and looks at the origin; camera
    axes are +x right, +y up, -z forward. Yaw rotates about world +y, pitch
    about camera +x, roll about the viewing axis.
    """
    cp, sp = math.cos(pose.pitch), math.sin(pose.pitch)
    cy, sy = math.cos(pose.yaw), math.sin(pose.yaw)
    cr, sr = math.cos(pose.roll), math.sin(pose.roll)
    rot_yaw = torch.tensor([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]], dtype=dtype)
    rot_pitch = torch.tensor([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]], dtype=dtype)
    rot_roll = torch.tensor([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]], dtype=dtype)
    return rot_yaw @ rot_pitch @ rot_roll
