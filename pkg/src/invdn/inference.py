"""Denoising by latent resampling, Monte Carlo self-ensemble, and noise generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError
from .model import InvDNModel
from .tensor import no_grad

DEFAULT_OVERLAP = 16

# (sample_index, true_z, rng) -> latent fed to the inverse
LatentHook = Callable[[int, np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class DenoiseOptions:
    mc_samples: int = 1
    seed: int = 0
    tile: int | None = None
    overlap: int = DEFAULT_OVERLAP

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if self.overlap < 0:
            raise ConfigError("overlap must be >= 0")


@dataclass
class NoiseGenOptions:
    epsilon: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for MC sample ``index``; independent of how many samples are drawn."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _as_image(x, dtype=np.float32) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 3:
        raise DimensionError(f"expected a (C,H,W) image, got shape {x.shape}")
    return x


def latent(model: InvDNModel, noisy, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """The (lr, z) pair of an image, as arrays. Exposes the true noisy latent."""
    with no_grad():
        split = model.forward(_as_image(noisy, dtype))
    return split.lr.data, split.z.data


def reconstruct(model: InvDNModel, lr, z, dtype=np.float32) -> np.ndarray:
    with no_grad():
        return model.inverse(np.asarray(lr, dtype=dtype), np.asarray(z, dtype=dtype)).data


def denoise_samples(model: InvDNModel, noisy, opts: DenoiseOptions | None = None,
                    z_hook: LatentHook | None = None) -> list[np.ndarray]:
    """Per-sample reconstructions ``clip(g^-1([lr; z_i]))`` with z_i ~ N(0, I)."""
    opts = opts or DenoiseOptions()
    lr, z = latent(model, noisy)
    outs = []
    for i in range(opts.mc_samples):
        rng = sample_rng(opts.seed, i)
        z_i = z_hook(i, z, rng) if z_hook else rng.standard_normal(z.shape).astype(np.float32)
        outs.append(np.clip(reconstruct(model, lr, z_i), 0.0, 1.0))
    return outs


def ensemble_mean(samples: list[np.ndarray]) -> np.ndarray:
    acc = np.zeros(samples[0].shape, dtype=np.float64)
    for s in samples:
        acc += s
    return (acc / len(samples)).astype(np.float32)


def denoise(model: InvDNModel, noisy, opts: DenoiseOptions | None = None,
            z_hook: LatentHook | None = None) -> np.ndarray:
    """Denoise a (C,H,W) image in [0, 1].

    The latent z is discarded and replaced by ``mc_samples`` fresh draws; the
    result is the average of the clamped reconstructions. With ``opts.tile``
    set, the image is processed in feathered tiles, which also admits extents
    not divisible by the model scale.
    """
    opts = opts or DenoiseOptions()
    noisy = _as_image(noisy)
    if opts.tile:
        return tile_process(model, noisy, opts.tile, opts.overlap,
                            lambda t: ensemble_mean(denoise_samples(model, t, opts, z_hook)))
    return ensemble_mean(denoise_samples(model, noisy, opts, z_hook))


def generate_noisy(model: InvDNModel, noisy, opts: NoiseGenOptions | None = None) -> np.ndarray:
    """New noisy image from the latent disturbance z' = z + epsilon * v, v ~ N(0, I).

    Runs in float64: the perturbation is tiny, so float32 round-off through the
    full forward/inverse pair would be of the same order as the signal.
    """
    opts = opts or NoiseGenOptions()
    lr, z = latent(model, noisy, np.float64)
    v = np.random.default_rng(opts.seed).standard_normal(z.shape)
    out = reconstruct(model, lr, z + opts.epsilon * v, np.float64)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# -- tiling ------------------------------------------------------------------------


def _tile_starts(length: int, tile: int, overlap: int) -> list[int]:
    if length <= tile:
        return [0]
    step = max(tile - overlap, 1)
    starts = list(range(0, length - tile, step))
    starts.append(length - tile)
    return starts


def _ramp(size: int, overlap: int, first: bool, last: bool) -> np.ndarray:
    w = np.ones(size)
    if overlap > 0:
        r = np.arange(1, overlap + 1) / (overlap + 1)
        if not first:
            w[:overlap] = np.minimum(w[:overlap], r)
        if not last:
            w[size - overlap :] = np.minimum(w[size - overlap :], r[::-1])
    return w


def tile_process(model: InvDNModel, image, tile: int, overlap: int,
                 f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply ``f`` over overlapping tiles and blend with linear feathering.

    Tiles are clipped to the image; an image shorter than ``tile`` along an
    axis is edge-padded up to a multiple of the model scale for that call and
    cropped afterwards. Pixels covered by a single tile are copied unchanged.
    """
    image = _as_image(image)
    s = model.config.scale
    if tile < s or tile % s:
        raise ConfigError(f"tile {tile} must be a positive multiple of the model scale {s}")
    if overlap < 0 or overlap >= tile:
        raise ConfigError(f"overlap {overlap} must lie in [0, tile)")
    c, h, w = image.shape
    acc = np.zeros((c, h, w), dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)
    ys, xs = _tile_starts(h, tile, overlap), _tile_starts(w, tile, overlap)
    for iy, y0 in enumerate(ys):
        th = min(tile, h)
        wy = _ramp(th, overlap, iy == 0, iy == len(ys) - 1)
        for ix, x0 in enumerate(xs):
            tw = min(tile, w)
            wx = _ramp(tw, overlap, ix == 0, ix == len(xs) - 1)
            patch = image[:, y0 : y0 + th, x0 : x0 + tw]
            ph, pw = -th % s, -tw % s
            if ph or pw:
                patch = np.pad(patch, ((0, 0), (0, ph), (0, pw)), mode="edge")
            out = np.asarray(f(patch))[:, :th, :tw]
            weight = np.outer(wy, wx)
            acc[:, y0 : y0 + th, x0 : x0 + tw] += out * weight
            wsum[y0 : y0 + th, x0 : x0 + tw] += weight
    return (acc / wsum).astype(np.float32)
