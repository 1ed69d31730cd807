"""Dataset ingestion and the procedural synthetic face dataset.

Real data layout: ``root/images/*.png``, ``root/masks/*.png`` (paletted, one
byte per label) and ``root/poses.json`` mapping stem -> [pitch, yaw, roll].
Poses are required inputs; estimating them is out of scope.

The synthetic generator builds an analytic scene per identity: a background
plane, a head ellipsoid (face), an upper hair cap and a lower garment slab,
ray-traced at poses drawn from the training pose prior. First-hit semantics
give exact masks and the sampled poses are recorded exactly, so the desk-scale
training and editing pipeline has noise-free supervision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PosePrior, TrainConfig
from .core import PITCH_RANGE, YAW_RANGE, CameraPose
from .errors import DataError
from .rawio import load_labels_png, load_rgb_png, save_labels_png, save_rgb_png

LABEL_BACKGROUND = 0
LABEL_FACE = 1
LABEL_HAIR = 2
LABEL_GARMENT = 3


@dataclass
class DatasetRecord:
    image: np.ndarray   # [H, W, 3] float32 in [0, 1]
    mask: np.ndarray    # [H, W] int64 labels
    pose: CameraPose


class FaceDataset:
    """Lazily loadable (image, mask, pose) triplets with deterministic order."""

    def __init__(self, records: list[DatasetRecord] | None = None):
        self._records = records or []

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, index: int) -> DatasetRecord:
        return self._records[index]

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
        poses = {}
        for i, rec in enumerate(self._records):
            stem = f"{i:05d}"
            save_rgb_png(rec.image, root / "images" / f"{stem}.png")
            save_labels_png(rec.mask, root / "masks" / f"{stem}.png")
            poses[stem] = [rec.pose.pitch, rec.pose.yaw, rec.pose.roll]
        (root / "poses.json").write_text(json.dumps(poses, indent=1, sort_keys=True))


class DiskFaceDataset(FaceDataset):
    def __init__(self, root: Path, stems: list[str], poses: dict):
        super().__init__()
        self._root = root
        self._stems = stems
        self._poses = poses

    def __len__(self) -> int:
        return len(self._stems)

    def __getitem__(self, index: int) -> DatasetRecord:
        stem = self._stems[index]
        image = load_rgb_png(self._root / "images" / f"{stem}.png")
        mask = load_labels_png(self._root / "masks" / f"{stem}.png")
        pitch, yaw, roll = self._poses[stem]
        return DatasetRecord(image=image, mask=mask, pose=CameraPose(pitch, yaw, roll))


def load_dataset(root: str | Path) -> FaceDataset:
    """Open a dataset directory; every image needs its mask and pose."""
    root = Path(root)
    images_dir = root / "images"
    if not images_dir.is_dir():
        return FaceDataset([])
    stems = sorted(p.stem for p in images_dir.glob("*.png"))
    if not stems:
        return FaceDataset([])
    poses_path = root / "poses.json"
    if not poses_path.is_file():
        raise DataError(f"missing pose file {poses_path}", path=str(poses_path))
    poses = json.loads(poses_path.read_text(encoding="utf-8"))
    for stem in stems:
        mask_path = root / "masks" / f"{stem}.png"
        if not mask_path.is_file():
            raise DataError(f"missing mask for image '{stem}': {mask_path}", path=str(mask_path))
        if stem not in poses:
            raise DataError(f"missing pose for image '{stem}' in {poses_path}", path=str(poses_path))
    return DiskFaceDataset(root, stems, poses)


def club_mask(mask: np.ndarray, clubbing) -> np.ndarray:
    """Map fine labels onto coarse groups elementwise."""
    clubbing = np.asarray(clubbing, dtype=np.int64)
    mask = np.asarray(mask)
    bad = (mask < 0) | (mask >= clubbing.size)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise DataError(
            f"mask label {mask[y, x]} at pixel ({int(y)}, {int(x)}) outside "
            f"the {clubbing.size}-class clubbing map"
        )
    return clubbing[mask]


# --- synthetic scene --------------------------------------------------------


@dataclass
class BlobScene:
    """Analytic scene parameters for one synthetic identity."""

    head_axes: np.ndarray       # ellipsoid semi-axes
    hair_scale: float           # hair shell = head_axes * hair_scale
    hair_cut: float             # hair occupies y > hair_cut
    garment_top: float
    garment_half_x: float
    garment_half_z: float
    skin_color: np.ndarray
    hair_color: np.ndarray
    garment_color: np.ndarray
    bg_color: np.ndarray
    bg_plane_z: float = -0.5

    @property
    def hair_axes(self) -> np.ndarray:
        return self.head_axes * self.hair_scale


_LIGHT = np.array([0.3, 0.5, 0.8])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


def random_scene(rng: np.random.Generator, head_radius: float = 0.18, jitter: float = 0.25) -> BlobScene:
    """Randomize one identity.

    Color ranges are deliberately wide (anchored hue, strong lightness and
    saturation spread): identities must look distinct for adversarial
    training to reward latent-dependent output.
    """

    def vary(base, spread=jitter):
        return base * (1.0 + spread * (rng.random() * 2.0 - 1.0))

    def vary_color(base, spread=0.5):
        c = np.array(base) * (0.45 + 1.1 * rng.random()) + spread * (rng.random(3) - 0.5)
        return np.clip(c, 0.05, 0.95)

    axes = head_radius * np.array([vary(0.85), vary(1.0), vary(0.9)])
    return BlobScene(
        head_axes=axes,
        hair_scale=vary(1.18, 0.05),
        hair_cut=vary(0.04, 0.5),
        garment_top=-vary(0.22, 0.1),
        garment_half_x=vary(0.3, 0.1),
        garment_half_z=vary(0.15, 0.1),
        skin_color=vary_color([0.8, 0.62, 0.45]),
        hair_color=vary_color([0.35, 0.25, 0.18]),
        garment_color=vary_color([0.25, 0.35, 0.6]),
        bg_color=vary_color([0.45, 0.5, 0.55]),
    )


def _rotation(pose: CameraPose) -> np.ndarray:
    cp, sp = math.cos(pose.pitch), math.sin(pose.pitch)
    cy, sy = math.cos(pose.yaw), math.sin(pose.yaw)
    cr, sr = math.cos(pose.roll), math.sin(pose.roll)
    rot_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rot_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rot_roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rot_yaw @ rot_pitch @ rot_roll


def pixel_rays(pose: CameraPose, width: int, height: int, fov_deg: float, radius: float):
    """Ray origin and per-pixel unit directions matching the render module."""
    rot = _rotation(pose)
    origin = rot @ np.array([0.0, 0.0, radius])
    tan_half = math.tan(math.radians(fov_deg) / 2.0)
    aspect = width / height
    xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    ys = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    grid_x = np.tile(xs, (height, 1))
    grid_y = np.tile(ys[:, None], (1, width))
    dirs = np.stack(
        [grid_x * tan_half * aspect, -grid_y * tan_half, -np.ones_like(grid_x)], axis=-1
    )
    dirs = dirs @ rot.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return origin, dirs.reshape(-1, 3)


def _ellipsoid_roots(origin, dirs, axes):
    """Both quadratic roots of the ray/ellipsoid intersection (nan if miss)."""
    o = origin / axes
    d = dirs / axes
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(o * d, axis=-1)
    c = np.sum(o * o) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = np.where(hit, (-b - sq) / (2.0 * a), np.nan)
    t2 = np.where(hit, (-b + sq) / (2.0 * a), np.nan)
    return t1, t2


def _hair_entry(origin, dirs, scene: BlobScene):
    """Depth at which a ray enters the hair region (outer shell above the cut)."""
    t1, t2 = _ellipsoid_roots(origin, dirs, scene.hair_axes)
    entry = np.full(dirs.shape[0], np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        y1 = origin[1] + t1 * dirs[:, 1]
        direct = ~np.isnan(t1) & (t1 > 0.0) & (y1 > scene.hair_cut)
        entry[direct] = t1[direct]
        # entering through the cut plane while inside the shell
        tau = (scene.hair_cut - origin[1]) / dirs[:, 1]
        y_rising = dirs[:, 1] > 0.0
        inside = ~np.isnan(t1) & (tau > t1) & (tau < t2) & (tau > 0.0) & y_rising
        via_plane = inside & ~direct
        entry[via_plane] = tau[via_plane]
    return entry


def _head_entry(origin, dirs, scene: BlobScene):
    t1, _ = _ellipsoid_roots(origin, dirs, scene.head_axes)
    entry = np.where(~np.isnan(t1) & (t1 > 0.0), t1, np.inf)
    return entry


def _garment_entry(origin, dirs, scene: BlobScene):
    lo = np.array([-scene.garment_half_x, -0.45, -scene.garment_half_z])
    hi = np.array([scene.garment_half_x, scene.garment_top, scene.garment_half_z])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (lo - origin) * inv
        t_hi = (hi - origin) * inv
    t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
    t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
    hit = (t_near < t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf), np.where(hit, np.argmax(
        np.minimum(t_lo, t_hi) == t_near[:, None], axis=-1), 0)


def _plane_entry(origin, dirs, plane_z: float):
    with np.errstate(divide="ignore"):
        t = (plane_z - origin[2]) / dirs[:, 2]
    return np.where((dirs[:, 2] != 0.0) & (t > 0.0), t, np.inf)


def _shade(color: np.ndarray, normal: np.ndarray) -> np.ndarray:
    lam = np.maximum(normal @ _LIGHT, 0.0)
    return np.clip(color[None, :] * (0.65 + 0.35 * lam[:, None]), 0.0, 1.0)


def trace_scene(
    scene: BlobScene, pose: CameraPose, width: int, height: int, fov_deg: float, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Render image and exact first-hit label mask for one view."""
    origin, dirs = pixel_rays(pose, width, height, fov_deg, radius)
    count = dirs.shape[0]

    t_bg = _plane_entry(origin, dirs, scene.bg_plane_z)
    t_face = _head_entry(origin, dirs, scene)
    t_hair = _hair_entry(origin, dirs, scene)
    t_garment, garment_axis = _garment_entry(origin, dirs, scene)

    depths = np.stack([t_bg, t_face, t_hair, t_garment], axis=0)
    labels = np.argmin(depths, axis=0)
    t_hit = depths[labels, np.arange(count)]
    points = origin[None, :] + t_hit[:, None] * dirs

    image = np.empty((count, 3))
    for label, color in (
        (LABEL_FACE, scene.skin_color),
        (LABEL_HAIR, scene.hair_color),
    ):
        axes = scene.head_axes if label == LABEL_FACE else scene.hair_axes
        sel = labels == label
        if sel.any():
            normal = points[sel] / (axes * axes)
            normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
            image[sel] = _shade(color, normal)
    sel = labels == LABEL_GARMENT
    if sel.any():
        normal = np.zeros((sel.sum(), 3))
        axis = garment_axis[sel]
        signs = -np.sign(dirs[sel, :])
        normal[np.arange(sel.sum()), axis] = signs[np.arange(sel.sum()), axis]
        image[sel] = _shade(scene.garment_color, normal)
    sel = labels == LABEL_BACKGROUND
    image[sel] = scene.bg_color

    return (
        image.reshape(height, width, 3).astype(np.float32),
        labels.reshape(height, width).astype(np.int64),
    )


def sample_pose_np(rng: np.random.Generator, prior: PosePrior) -> CameraPose:
    draws = rng.standard_normal(3)
    pitch = prior.pitch_mean + prior.pitch_std * draws[0]
    yaw = prior.yaw_mean + prior.yaw_std * draws[1]
    roll = prior.roll_mean + prior.roll_std * draws[2]
    pitch = min(max(pitch, PITCH_RANGE[0]), PITCH_RANGE[1])
    yaw = min(max(yaw, YAW_RANGE[0]), YAW_RANGE[1])
    return CameraPose(pitch, yaw, roll)


def synth_generate(cfg: TrainConfig, seed: int | None = None) -> FaceDataset:
    """Generate the synthetic dataset described by the config."""
    syn = cfg.data.synthetic
    rng = np.random.default_rng(cfg.data.synthetic.seed if seed is None else seed)
    records = []
    for _ in range(syn.count):
        scene = random_scene(rng, head_radius=syn.head_radius, jitter=syn.jitter)
        pose = sample_pose_np(rng, cfg.training.pose_prior)
        image, mask = trace_scene(
            scene,
            pose,
            cfg.render.width,
            cfg.render.height,
            cfg.render.fov_deg,
            cfg.render.orbit_radius,
        )
        records.append(DatasetRecord(image=image, mask=mask, pose=pose))
    return FaceDataset(records)
