"""Training data: bicubic targets, procedural clean images, noisy pairs, augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, ImageIOError


def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel; a=-0.5 is Catmull-Rom."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def bicubic_weights(n_in: int, factor: int) -> np.ndarray:
    """(n_in // factor, n_in) resampling matrix.

    Output sample i sits at the centre of its input box, ``(i + 0.5) * factor - 0.5``.
    The kernel is widened by ``factor`` to low-pass before decimation; taps past
    the border are clamped to the edge pixel and each row sums to one.
    """
    n_out = n_in // factor
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) * factor - 0.5
        lo = int(np.floor(centre - 2 * factor)) + 1
        hi = int(np.ceil(centre + 2 * factor))
        taps = np.arange(lo, hi)
        w = cubic_kernel((taps - centre) / factor)
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), w)
        mat[i] /= mat[i].sum()
    return mat


def bicubic_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Separable bicubic downscaling of a (..., H, W) image, clamped to [0, 1]."""
    x = np.asarray(x)
    if factor < 1 or (factor & (factor - 1)):
        raise DimensionError(f"factor must be a power of two, got {factor}")
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise DimensionError(f"extents {h}x{w} not divisible by {factor}")
    if factor == 1:
        return np.clip(x, 0.0, 1.0).astype(x.dtype, copy=True)
    rows = bicubic_weights(h, factor)
    cols = bicubic_weights(w, factor)
    out = rows @ x.astype(np.float64) @ cols.T
    return np.clip(out, 0.0, 1.0).astype(x.dtype)


# -- procedural clean images --------------------------------------------------


def procedural_texture(rng: np.random.Generator, size: int = 128, channels: int = 3) -> np.ndarray:
    """Smooth synthetic scene: colour gradient, soft blobs, a wave pattern and soft-edged shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    corners = rng.uniform(0.15, 0.85, size=(4, channels))
    img = (
        corners[0][:, None, None] * ((1 - yy) * (1 - xx))
        + corners[1][:, None, None] * ((1 - yy) * xx)
        + corners[2][:, None, None] * (yy * (1 - xx))
        + corners[3][:, None, None] * (yy * xx)
    )
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, 1, 2)
        s = rng.uniform(0.08, 0.3)
        amp = rng.uniform(-0.35, 0.35, size=channels)
        img = img + amp[:, None, None] * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(1.5, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    img = img + rng.uniform(0.0, 0.1, size=channels)[:, None, None] * wave
    for _ in range(rng.integers(1, 4)):
        colour = rng.uniform(0.05, 0.95, size=channels)
        edge = rng.uniform(0.8, 2.0) / size
        cy, cx = rng.uniform(0.15, 0.85, 2)
        if rng.random() < 0.5:
            r = rng.uniform(0.08, 0.25)
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) - r
        else:
            hy, hx = rng.uniform(0.06, 0.2, 2)
            dist = np.maximum(np.abs(yy - cy) - hy, np.abs(xx - cx) - hx)
        alpha = 1.0 / (1.0 + np.exp(np.clip(dist / edge, -50, 50)))
        img = img * (1 - alpha) + colour[:, None, None] * alpha
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def procedural_pool(rng: np.random.Generator, count: int, size: int = 128, channels: int = 3) -> list[np.ndarray]:
    return [procedural_texture(rng, size, channels) for _ in range(count)]


# -- augmentation --------------------------------------------------------------


def apply_augmentation(x: np.ndarray, hflip: bool, vflip: bool, rot: int) -> np.ndarray:
    """Flip then rotate the trailing (H, W) plane by ``rot`` quarter turns."""
    if hflip:
        x = x[..., :, ::-1]
    if vflip:
        x = x[..., ::-1, :]
    if rot % 4:
        if x.shape[-1] != x.shape[-2]:
            raise DimensionError("rotation needs square patches")
        x = np.rot90(x, rot % 4, axes=(-2, -1))
    return np.ascontiguousarray(x)


def augment(pair: tuple[np.ndarray, np.ndarray], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random flip/rotation, identically, to both members of a (noisy, clean) pair."""
    hflip, vflip = bool(rng.integers(2)), bool(rng.integers(2))
    rot = int(rng.integers(4))
    return tuple(apply_augmentation(p, hflip, vflip, rot) for p in pair)


# -- noisy pair sources ----------------------------------------------------------


def add_noise(clean: np.ndarray, sigma: float, signal_gain: float, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise plus an optional ``signal_gain * sqrt(x)`` scaled term, clipped to [0, 1]."""
    noise = rng.standard_normal(clean.shape) * sigma
    if signal_gain:
        noise = noise + rng.standard_normal(clean.shape) * (signal_gain * np.sqrt(np.clip(clean, 0, None)))
    return np.clip(clean + noise, 0.0, 1.0).astype(np.float32)


def _random_crop(rng, arrays: Sequence[np.ndarray], patch: int) -> list[np.ndarray]:
    h, w = arrays[0].shape[-2:]
    if h < patch or w < patch:
        raise DimensionError(f"image {h}x{w} smaller than patch {patch}")
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    return [a[..., top : top + patch, left : left + patch] for a in arrays]


@dataclass
class NoisePairSource:
    """Aligned (noisy, clean) patch provider.

    ``cleans`` are full images; ``noisies`` (same length, same shapes) are
    optional real noisy counterparts. When absent, noise is synthesized per
    draw with sigma uniform in ``sigma_range`` (values on the [0, 1] scale).
    """

    cleans: list
    noisies: list | None = None
    sigma_range: tuple[float, float] = (5 / 255, 50 / 255)
    signal_gain: float = 0.0
    augment: bool = True

    def __post_init__(self):
        if not self.cleans:
            raise ConfigError("NoisePairSource needs at least one clean image")
        if self.noisies is not None:
            if len(self.noisies) != len(self.cleans):
                raise ConfigError("clean and noisy image lists differ in length")
            for c, n in zip(self.cleans, self.noisies):
                if c.shape != n.shape:
                    raise DimensionError(f"unaligned pair shapes {c.shape} vs {n.shape}")
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad sigma range {self.sigma_range}")

    def sample(self, rng: np.random.Generator, patch: int) -> tuple[np.ndarray, np.ndarray]:
        k = int(rng.integers(len(self.cleans)))
        if self.noisies is not None:
            clean, noisy = _random_crop(rng, [self.cleans[k], self.noisies[k]], patch)
        else:
            (clean,) = _random_crop(rng, [self.cleans[k]], patch)
            lo, hi = self.sigma_range
            sigma = lo if hi == lo else rng.uniform(lo, hi)
            noisy = add_noise(clean, sigma, self.signal_gain, rng)
        pair = (np.ascontiguousarray(noisy, dtype=np.float32), np.ascontiguousarray(clean, dtype=np.float32))
        if self.augment:
            pair = augment(pair, rng)
        return pair

    def batch(self, rng: np.random.Generator, batch_size: int, patch: int) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.sample(rng, patch) for _ in range(batch_size)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def folder_source(root, channels: int = 3, **kwargs) -> NoisePairSource:
    """Load ``<root>/clean/*.png`` and, when present, ``<root>/noisy/*.png`` matched by filename."""
    from .imageio import ensure_channels, load_image

    root = Path(root)
    clean_dir = root / "clean"
    if not clean_dir.is_dir():
        raise ImageIOError(f"{clean_dir}: missing clean/ directory")
    names = sorted(p.name for p in clean_dir.glob("*.png"))
    if not names:
        raise ImageIOError(f"{clean_dir}: no PNG files")
    cleans = [ensure_channels(load_image(clean_dir / n), channels) for n in names]
    noisy_dir = root / "noisy"
    noisies = None
    if noisy_dir.is_dir():
        missing = [n for n in names if not (noisy_dir / n).exists()]
        if missing:
            raise ImageIOError(f"{noisy_dir}: no noisy match for {missing[:3]}")
        noisies = [ensure_channels(load_image(noisy_dir / n), channels) for n in names]
    return NoisePairSource(cleans, noisies, **kwargs)
