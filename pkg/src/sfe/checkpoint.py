"""Checkpoint container format and generator persistence.

Layout: magic ``SFE1``, a little-endian u32 header length, a UTF-8 JSON
header mapping tensor names to {dtype, shape, offset}, then the raw payload
of little-endian float32 tensors. The header also embeds free-form metadata,
including the full training config, so a checkpoint is self-describing.
Writing is canonical (sorted names, compact JSON), which makes
save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, config_from_dict, config_to_dict
from .errors import DataError

MAGIC = b"SFE1"


def save_container(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write tensors and metadata; tensors are cast to little-endian float32."""
    names = sorted(tensors)
    if len(names) != len(tensors):
        raise ValueError("tensor names must be unique")
    entries = {}
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries[name] = {"dtype": "f4", "shape": list(arr.shape), "offset": len(payload)}
        payload.extend(arr.tobytes())
    header = json.dumps(
        {"tensors": entries, "meta": meta}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path} is not a checkpoint container (bad magic)", path=str(path))
    (header_len,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header in {path}: {exc}", path=str(path)) from exc
    payload = blob[8 + header_len :]
    tensors = {}
    for name, entry in header["tensors"].items():
        shape = entry["shape"]
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise DataError(f"tensor '{name}' offset out of bounds in {path}", path=str(path))
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
        tensors[name] = arr
    return tensors, header["meta"]


def module_tensors(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.{name}": param.detach().cpu().numpy()
        for name, param in module.named_parameters()
    }


def load_module_tensors(
    module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str
) -> None:
    with torch.no_grad():
        for name, param in module.named_parameters():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise DataError(f"checkpoint is missing tensor '{key}'")
            value = torch.from_numpy(tensors[key]).to(param.dtype)
            if value.shape != param.shape:
                raise DataError(
                    f"tensor '{key}' has shape {tuple(value.shape)}, expected {tuple(param.shape)}"
                )
            param.copy_(value)


def save_generator(path: str | Path, gen, meta: dict | None = None) -> None:
    from .render import Generator  # local import to avoid a cycle

    assert isinstance(gen, Generator)
    full_meta = {"kind": "generator", "config": config_to_dict(gen.cfg)}
    if meta:
        full_meta.update(meta)
    save_container(path, module_tensors(gen, "gen"), full_meta)


def load_generator(path: str | Path):
    """Rebuild a Generator (and its config) from any checkpoint container."""
    from .render import Generator

    tensors, meta = load_container(path)
    cfg = config_from_dict(meta["config"])
    gen = Generator(cfg)
    load_module_tensors(gen, tensors, "gen")
    gen.eval()
    return gen, cfg, meta


def checkpoint_config(path: str | Path) -> TrainConfig:
    _, meta = load_container(path)
    return config_from_dict(meta["config"])
