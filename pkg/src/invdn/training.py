"""Dual-objective training: LR matching in the forward direction, reconstruction in the inverse."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .data import NoisePairSource, bicubic_downsample
from .errors import ConfigError, DimensionError, TrainingError
from .model import InvDNModel
from .tensor import Tensor, as_tensor, backward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 14
    patch: int = 144
    lr_halve_every: int = 50_000
    m_forw: int = 2
    m_back: int = 1
    loss_weights: tuple[float, float] = (1.0, 1.0)
    grad_clip: float = 10.0
    seed: int = 0
    # synthetic noise, in 8-bit levels
    sigma_min: float = 5.0
    sigma_max: float = 50.0
    signal_gain: float = 0.0
    augment: bool = True
    checkpoint_every: int = 1000

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.m_forw not in (1, 2) or self.m_back not in (1, 2):
            raise ConfigError("loss norms must be 1 or 2")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"bad Adam betas {self.betas}")
        if len(self.loss_weights) != 2 or min(self.loss_weights) < 0:
            raise ConfigError(f"bad loss weights {self.loss_weights}")
        if self.batch_size < 1 or self.patch < 1 or self.lr_halve_every < 1:
            raise ConfigError("batch_size, patch and lr_halve_every must be positive")
        if not 0 <= self.sigma_min <= self.sigma_max:
            raise ConfigError("need 0 <= sigma_min <= sigma_max")

    def validate_for(self, model: InvDNModel) -> None:
        if self.patch % model.config.scale:
            raise ConfigError(f"patch {self.patch} not divisible by {model.config.scale}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    return cfg.lr0 * 2.0 ** (-(iteration // cfg.lr_halve_every))


# -- losses ---------------------------------------------------------------------


def _norm_loss(pred, target, m: int) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target, dtype=as_tensor(pred).dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    if m not in (1, 2):
        raise ConfigError(f"m must be 1 or 2, got {m}")
    diff = pred - target
    return (diff.abs() if m == 1 else diff * diff).mean()


def loss_forward(lr_pred, lr_gt, m: int = 2) -> Tensor:
    """Mean per-pixel m-norm between the predicted and bicubic low-resolution images."""
    return _norm_loss(lr_pred, lr_gt, m)


def loss_backward(x_rec, x_clean, m: int = 1) -> Tensor:
    """Mean per-pixel m-norm between the reconstruction and the clean image."""
    return _norm_loss(x_rec, x_clean, m)


# -- Adam ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adam_step(state: AdamState, params, grads, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params[i].data``."""
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ConfigError("Adam buffers are not aligned with the parameters")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)


def clip_grad_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads if g is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            if g is not None:
                g *= scale
    return total


# -- training ------------------------------------------------------------------------


def compute_losses(model: InvDNModel, noisy, clean, cfg: TrainConfig, rng: np.random.Generator, z_hf=None):
    """Forward and backward objectives for a batch; returns (L_forw, L_back) tensors.

    ``z_hf`` overrides the N(0, I) draw for the latent fed to the inverse.
    """
    noisy = np.asarray(noisy, dtype=np.float32)
    clean = np.asarray(clean, dtype=np.float32)
    lr_gt = bicubic_downsample(clean, model.config.scale)
    split = model.forward(noisy)
    l_forw = loss_forward(split.lr, lr_gt, cfg.m_forw)
    if z_hf is None:
        z_hf = rng.standard_normal(split.z.shape).astype(split.z.dtype)
    x_rec = model.inverse(split.lr, as_tensor(z_hf, dtype=split.z.dtype))
    l_back = loss_backward(x_rec, clean, cfg.m_back)
    return l_forw, l_back


def train_step(model: InvDNModel, batch, cfg: TrainConfig, adam: AdamState, rng: np.random.Generator,
               iteration: int = 0) -> tuple[float, float]:
    noisy, clean = batch
    model.zero_grad()
    l_forw, l_back = compute_losses(model, noisy, clean, cfg, rng)
    lf, lb = l_forw.item(), l_back.item()
    if not (math.isfinite(lf) and math.isfinite(lb)):
        raise TrainingError(f"non-finite loss (forw={lf}, back={lb})", iteration)
    w_f, w_b = cfg.loss_weights
    total = l_forw * w_f + l_back * w_b
    backward(total)
    params = model.parameters()
    grads = [p.grad for p in params]
    norm = clip_grad_norm(grads, cfg.grad_clip)
    if not math.isfinite(norm):
        raise TrainingError("non-finite gradient norm", iteration)
    adam_step(adam, params, grads, learning_rate(cfg, iteration), cfg.betas, cfg.eps)
    return lf, lb


def train(model: InvDNModel, source: NoisePairSource, cfg: TrainConfig, iters: int,
          adam: AdamState | None = None, start_iter: int = 0,
          callback: Callable[[int, float, float], None] | None = None) -> list[tuple[int, float, float]]:
    """Run ``iters`` steps; returns the (iteration, L_forw, L_back) history.

    Data and latent draws come from two streams seeded by ``cfg.seed`` and
    ``start_iter``, so a fixed seed gives an identical loss trajectory.
    """
    cfg.validate_for(model)
    if adam is None:
        adam = AdamState.for_params(model.parameters())
    data_seq, z_seq = np.random.SeedSequence([cfg.seed, start_iter]).spawn(2)
    data_rng, z_rng = np.random.default_rng(data_seq), np.random.default_rng(z_seq)
    history = []
    for it in range(start_iter, start_iter + iters):
        batch = source.batch(data_rng, cfg.batch_size, cfg.patch)
        lf, lb = train_step(model, batch, cfg, adam, z_rng, it)
        history.append((it, lf, lb))
        if callback is not None:
            callback(it, lf, lb)
    return history
