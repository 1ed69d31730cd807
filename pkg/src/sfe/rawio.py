"""Image and raw-array file helpers.

RGB frames go out as 8-bit PNG, label maps as paletted PNG (one byte per
label), and float arrays as raw little-endian float32 with a JSON sidecar
describing the shape.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

# Fixed palette: background gray, face tan, hair brown, garment blue, then
# distinguishable extras for finer label sets.
_PALETTE = [
    (64, 64, 64),
    (224, 172, 124),
    (96, 56, 24),
    (40, 90, 180),
    (200, 40, 40),
    (40, 180, 90),
    (230, 220, 60),
    (160, 60, 200),
]


def rgb_to_png_bytes(rgb: np.ndarray) -> bytes:
    """Encode an [H, W, 3] float image in [0, 1] as PNG bytes."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    img = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def labels_to_png_bytes(labels: np.ndarray) -> bytes:
    """Encode an [H, W] integer label map as a paletted PNG."""
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("labels must fit in one byte")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    palette = []
    for i in range(256):
        palette.extend(_PALETTE[i % len(_PALETTE)] if i < len(_PALETTE) else (i, i, i))
    img.putpalette(palette)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_rgb_png(rgb: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(rgb_to_png_bytes(rgb))


def save_labels_png(labels: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(labels_to_png_bytes(labels))


def load_rgb_png(source: str | Path | bytes) -> np.ndarray:
    """Load a PNG as an [H, W, 3] float array in [0, 1]."""
    img = Image.open(io.BytesIO(source) if isinstance(source, bytes) else source)
    return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def load_labels_png(source: str | Path | bytes) -> np.ndarray:
    """Load a paletted or grayscale PNG as an [H, W] int64 label map."""
    img = Image.open(io.BytesIO(source) if isinstance(source, bytes) else source)
    if img.mode not in ("P", "L"):
        raise ValueError(f"label images must be paletted or grayscale, got mode {img.mode}")
    return np.asarray(img, dtype=np.int64)


def save_raw_f32(array: np.ndarray, path: str | Path) -> None:
    """Write little-endian float32 data plus a `.json` shape sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {"dtype": "f4", "shape": list(arr.shape), "byteorder": "little"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar), encoding="utf-8")


def load_raw_f32(path: str | Path) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(sidecar["shape"]).copy()
