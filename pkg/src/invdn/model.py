"""The multi-scale invertible denoising network g and its inverse."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, DimensionError
from .invertible import SCALE_BOUND, TRANSFORMS, InvertibleBlock
from .tensor import Tensor, as_tensor, concat


@dataclass(frozen=True)
class ModelConfig:
    num_downscale_blocks: int = 2
    blocks_per_scale: int = 8
    hidden_channels: int = 32
    input_channels: int = 3
    transform_kind: str = "haar"
    scale_bound: float = SCALE_BOUND

    def __post_init__(self):
        if self.num_downscale_blocks < 1:
            raise ConfigError("num_downscale_blocks must be >= 1")
        if self.blocks_per_scale < 1:
            raise ConfigError("blocks_per_scale must be >= 1")
        if self.hidden_channels < 1 or self.input_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.transform_kind not in TRANSFORMS:
            raise ConfigError(f"transform_kind must be one of {sorted(TRANSFORMS)}, got {self.transform_kind!r}")
        if not self.scale_bound > 0:
            raise ConfigError("scale_bound must be > 0")

    @property
    def scale(self) -> int:
        return 2**self.num_downscale_blocks

    @property
    def output_channels(self) -> int:
        return self.input_channels * 4**self.num_downscale_blocks

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentSplit:
    """Forward output split into the low-resolution image and the latent z."""

    lr: Tensor
    z: Tensor

    def joined(self) -> Tensor:
        return concat([self.lr, self.z], axis=self.lr.ndim - 3)


class InvDNModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        cfg = self.config
        self.scales: list[tuple[type, list[InvertibleBlock]]] = []
        c = cfg.input_channels
        for _ in range(cfg.num_downscale_blocks):
            blocks = [InvertibleBlock(c, cfg.hidden_channels, rng, cfg.scale_bound) for _ in range(cfg.blocks_per_scale)]
            self.scales.append((TRANSFORMS[cfg.transform_kind], blocks))
            c *= 4

    def named_parameters(self):
        for s, (_, blocks) in enumerate(self.scales):
            for b, blk in enumerate(blocks):
                yield from blk.named_parameters(f"scale{s}.block{b}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "InvDNModel":
        """Cast all parameters in place (used for float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def _check_input(self, y: Tensor) -> None:
        cfg = self.config
        if y.ndim not in (3, 4):
            raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {y.shape}")
        c, h, w = y.shape[-3:]
        if c != cfg.input_channels:
            raise DimensionError(f"model expects {cfg.input_channels} channels, got {c}")
        if h % cfg.scale or w % cfg.scale:
            raise DimensionError(f"extents {h}x{w} must be divisible by {cfg.scale}")

    def transform(self, y) -> Tensor:
        """Full forward map g(y) without splitting."""
        u = as_tensor(y)
        self._check_input(u)
        for transform, blocks in self.scales:
            u = transform.forward(u)
            for blk in blocks:
                u = blk.forward(u)
        return u

    def forward(self, y) -> LatentSplit:
        out = self.transform(y)
        k = self.config.input_channels
        if out.ndim == 3:
            return LatentSplit(out[:k], out[k:])
        return LatentSplit(out[:, :k], out[:, k:])

    __call__ = forward

    def inverse(self, lr, z) -> Tensor:
        lr, z = as_tensor(lr), as_tensor(z)
        cfg = self.config
        k = cfg.input_channels
        cdim = lr.ndim - 3
        if lr.ndim not in (3, 4) or z.ndim != lr.ndim:
            raise DimensionError(f"inconsistent lr/z ranks: {lr.shape} vs {z.shape}")
        if lr.shape[cdim] != k or z.shape[cdim] != cfg.output_channels - k:
            raise DimensionError(
                f"expected lr with {k} and z with {cfg.output_channels - k} channels, got {lr.shape} and {z.shape}"
            )
        if lr.shape[:cdim] != z.shape[:cdim] or lr.shape[-2:] != z.shape[-2:]:
            raise DimensionError(f"lr {lr.shape} and z {z.shape} disagree on batch or spatial extents")
        u = concat([lr, z], axis=cdim)
        for transform, blocks in reversed(self.scales):
            for blk in reversed(blocks):
                u = blk.inverse(u)
            u = transform.inverse(u)
        return u


def parameter_count(model: InvDNModel) -> int:
    return int(sum(p.size for p in model.parameters()))
