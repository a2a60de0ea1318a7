"""Raw float64 dumps with JSON sidecars, 8-bit image output, key-value reports."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_raw(path, x, **meta) -> None:
    """Write ``x`` as little-endian float64 to ``path`` and its header to ``path.json``."""
    path = Path(path)
    x = np.asarray(x, dtype=np.float64)
    path.write_bytes(x.astype("<f8").tobytes())
    header = {"shape": list(x.shape), "dtype": "<f8", **meta}
    path.with_name(path.name + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_raw(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    return data.reshape(header["shape"]), header


def to_uint8(x) -> np.ndarray:
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, x, scale: float | None = None) -> None:
    """Write a (C, H, W) or (H, W) array as 8-bit PNG/PGM after clipping to [0, 1].

    ``scale`` divides the values first (e.g. the max of a std map).
    """
    from PIL import Image

    x = np.asarray(x, dtype=np.float64)
    if scale:
        x = x / scale
    if x.ndim == 3:
        x = x[0] if x.shape[0] == 1 else np.moveaxis(x, 0, -1)
    Image.fromarray(to_uint8(x)).save(path)


def load_image(path) -> np.ndarray:
    """Read an 8-bit image into a float64 (C, H, W) array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L") if im.mode not in ("L", "RGB") else im, dtype=np.float64) / 255.0
    return arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)


def write_report(path, fields: dict) -> None:
    lines = [f"{k} = {v}" for k, v in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
