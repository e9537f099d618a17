"""PNG codec (8/16-bit, gray/RGB) with channel-first float images in [0, 1]."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import png

from .errors import DimensionError, ImageIOError


@contextmanager
def atomic_path(path):
    """Yield a temp path beside ``path``; rename over it only on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_image(path) -> np.ndarray:
    """Read a PNG as float32 (C, H, W) in [0, 1]. Alpha planes are dropped."""
    path = Path(path)
    try:
        reader = png.Reader(filename=str(path))
        width, height, rows, info = reader.asDirect()
        arr = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except FileNotFoundError:
        raise ImageIOError(f"{path}: no such file") from None
    except (png.Error, ValueError, EOFError, OSError) as exc:
        raise ImageIOError(f"{path}: cannot decode PNG ({exc})") from None
    planes = info["planes"]
    if arr.shape != (height, width * planes):
        raise ImageIOError(f"{path}: truncated image data")
    arr = arr.reshape(height, width, planes)
    if info.get("alpha"):
        arr = arr[..., :-1]
    maxval = float(2 ** info["bitdepth"] - 1)
    return np.ascontiguousarray((arr / maxval).astype(np.float32).transpose(2, 0, 1))


def save_image(img, path, bitdepth: int = 8) -> None:
    """Write a (C, H, W) or (H, W) image, clamped to [0, 1] and quantized round-half-up."""
    if bitdepth not in (8, 16):
        raise ImageIOError(f"{path}: unsupported bit depth {bitdepth}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DimensionError(f"cannot save image of shape {img.shape} as PNG")
    maxval = 2**bitdepth - 1
    q = np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5).astype(np.uint16 if bitdepth == 16 else np.uint8)
    c, h, w = q.shape
    rows = q.transpose(1, 2, 0).reshape(h, w * c)
    writer = png.Writer(width=w, height=h, greyscale=(c == 1), bitdepth=bitdepth)
    path = Path(path)
    try:
        with atomic_path(path) as tmp, open(tmp, "wb") as fh:
            writer.write(fh, rows)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write ({exc})") from None


def ensure_channels(img: np.ndarray, channels: int) -> np.ndarray:
    """Replicate a single gray channel up to ``channels``; reject other mismatches."""
    if img.shape[0] == channels:
        return img
    if img.shape[0] == 1:
        return np.repeat(img, channels, axis=0)
    raise DimensionError(f"image has {img.shape[0]} channels, model needs {channels}")
