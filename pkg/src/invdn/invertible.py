"""Exactly invertible building blocks: Haar wavelet, squeeze, coupling block."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, as_tensor, concat, conv2d, exp, leaky_relu, make_op, tanh

SCALE_BOUND = 1.0
LEAKY_SLOPE = 0.2


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _check_even(x: np.ndarray) -> None:
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial extents must be even, got {h}x{w}")


def _check_quad(y: np.ndarray) -> None:
    if y.shape[-3] % 4:
        raise DimensionError(f"channel count must be divisible by 4, got {y.shape[-3]}")


def haar_forward_array(x: np.ndarray) -> np.ndarray:
    x4, unbatched = _batched(x)
    _check_even(x4)
    a = x4[:, :, 0::2, 0::2]
    b = x4[:, :, 0::2, 1::2]
    c = x4[:, :, 1::2, 0::2]
    d = x4[:, :, 1::2, 1::2]
    half = x4.dtype.type(0.5)
    out = np.concatenate(
        [
            (a + b + c + d) * half,
            (a - b + c - d) * half,
            (a + b - c - d) * half,
            (a - b - c + d) * half,
        ],
        axis=1,
    )
    return out[0] if unbatched else out


def haar_inverse_array(y: np.ndarray) -> np.ndarray:
    y4, unbatched = _batched(y)
    _check_quad(y4)
    n, c4, h, w = y4.shape
    c = c4 // 4
    ll, lh, hl, hh = (y4[:, k * c : (k + 1) * c] for k in range(4))
    half = y4.dtype.type(0.5)
    x = np.empty((n, c, 2 * h, 2 * w), dtype=y4.dtype)
    x[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * half
    x[:, :, 0::2, 1::2] = (ll - lh + hl - hh) * half
    x[:, :, 1::2, 0::2] = (ll + lh - hl - hh) * half
    x[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * half
    return x[0] if unbatched else x


def haar_forward(x) -> Tensor:
    """Orthonormal 2x2 Haar analysis: (C,H,W) -> (4C,H/2,W/2), all LL bands first.

    For a block [[a, b], [c, d]] the four bands are LL=(a+b+c+d)/2,
    LH=(a-b+c-d)/2, HL=(a+b-c-d)/2 and HH=(a-b-c+d)/2. The transform is
    orthogonal, so its adjoint (used for the gradient) is its inverse.
    """
    x = as_tensor(x)
    return make_op(haar_forward_array(x.data), (x,), lambda g: (haar_inverse_array(g),))


def haar_inverse(y) -> Tensor:
    y = as_tensor(y)
    return make_op(haar_inverse_array(y.data), (y,), lambda g: (haar_forward_array(g),))


def squeeze_forward_array(x: np.ndarray) -> np.ndarray:
    x4, unbatched = _batched(x)
    _check_even(x4)
    n, c, h, w = x4.shape
    out = x4.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4)
    out = out.reshape(n, 4 * c, h // 2, w // 2)
    return out[0] if unbatched else out


def squeeze_inverse_array(y: np.ndarray) -> np.ndarray:
    y4, unbatched = _batched(y)
    _check_quad(y4)
    n, c4, h, w = y4.shape
    out = y4.reshape(n, c4 // 4, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3)
    out = out.reshape(n, c4 // 4, 2 * h, 2 * w)
    return out[0] if unbatched else out


def squeeze_forward(x) -> Tensor:
    """Checkerboard space-to-depth.

    Input channel ``c`` lands in output channels ``4c..4c+3`` holding the
    (even,even), (even,odd), (odd,even), (odd,odd) sites respectively.
    """
    x = as_tensor(x)
    return make_op(squeeze_forward_array(x.data), (x,), lambda g: (squeeze_inverse_array(g),))


def squeeze_inverse(y) -> Tensor:
    y = as_tensor(y)
    return make_op(squeeze_inverse_array(y.data), (y,), lambda g: (squeeze_forward_array(g),))


class HaarTransform:
    kind = "haar"
    forward = staticmethod(haar_forward)
    inverse = staticmethod(haar_inverse)


class SqueezeTransform:
    kind = "squeeze"
    forward = staticmethod(squeeze_forward)
    inverse = staticmethod(squeeze_inverse)


TRANSFORMS = {"haar": HaarTransform, "squeeze": SqueezeTransform}


class Conv:
    """3x3 convolution parameters (weight + bias)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator | None, zero: bool = False, k: int = 3):
        shape = (c_out, c_in, k, k)
        if zero or rng is None:
            w = np.zeros(shape, dtype=np.float32)
        else:
            # He-normal for a leaky-ReLU(0.2) successor.
            std = np.sqrt(2.0 / (1 + LEAKY_SLOPE**2) / (c_in * k * k))
            w = (rng.standard_normal(shape) * std).astype(np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class ResidualSubnet:
    """conv3x3 -> lrelu -> conv3x3 -> lrelu -> conv3x3 (+ input when widths match).

    The last convolution starts at zero, so a fresh subnet outputs zeros
    (or exactly its input when the skip is active).
    """

    def __init__(self, in_channels: int, out_channels: int, hidden_channels: int = 32, rng=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.hidden_channels = hidden_channels
        self.conv_in = Conv(in_channels, hidden_channels, rng)
        self.conv_hidden = Conv(hidden_channels, hidden_channels, rng)
        self.conv_out = Conv(hidden_channels, out_channels, rng, zero=True)

    @property
    def skip(self) -> bool:
        return self.in_channels == self.out_channels

    def __call__(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.conv_in(x), LEAKY_SLOPE)
        h = leaky_relu(self.conv_hidden(h), LEAKY_SLOPE)
        out = self.conv_out(h)
        return out + x if self.skip else out

    def named_parameters(self, prefix: str = "phi"):
        for name in ("conv_in", "conv_hidden", "conv_out"):
            yield from getattr(self, name).named_parameters(f"{prefix}.{name}")


class InvertibleBlock:
    """Affine coupling block over a (C, 3C) channel split.

    forward:  a' = a + phi2(b);  b' = b * exp(s(a')) + phi4(a')
    inverse:  b = (b' - phi4(a')) / exp(s(a'));  a = a' - phi2(b)

    The log-scale is soft-bounded, s = c * tanh(phi3 / c), so each block can
    stretch or shrink the high branch by at most e^c. Without a bound the
    trained network drifts toward extreme scales and the inverse overflows.
    """

    def __init__(self, split_low: int, hidden_channels: int = 32, rng=None, scale_bound: float = SCALE_BOUND):
        if split_low < 1:
            raise DimensionError("split_low must be >= 1")
        if not scale_bound > 0:
            raise DimensionError("scale_bound must be positive")
        self.split_low = split_low
        self.scale_bound = float(scale_bound)
        c, c3 = split_low, 3 * split_low
        self.phi2 = ResidualSubnet(c3, c, hidden_channels, rng)
        self.phi3 = ResidualSubnet(c, c3, hidden_channels, rng)
        self.phi4 = ResidualSubnet(c, c3, hidden_channels, rng)

    @property
    def channels(self) -> int:
        return 4 * self.split_low

    def _split(self, u: Tensor) -> tuple[Tensor, Tensor]:
        cdim = u.ndim - 3
        if u.ndim not in (3, 4) or u.shape[cdim] != self.channels:
            raise DimensionError(f"block expects {self.channels} channels, got shape {u.shape}")
        c = self.split_low
        if cdim == 0:
            return u[:c], u[c:]
        return u[:, :c], u[:, c:]

    def _log_scale(self, a: Tensor) -> Tensor:
        c = self.scale_bound
        return tanh(self.phi3(a) * (1 / c)) * c

    def forward(self, u) -> Tensor:
        u = as_tensor(u)
        a, b = self._split(u)
        a2 = a + self.phi2(b)
        b2 = b * exp(self._log_scale(a2)) + self.phi4(a2)
        return concat([a2, b2], axis=u.ndim - 3)

    def inverse(self, u) -> Tensor:
        u = as_tensor(u)
        a2, b2 = self._split(u)
        b = (b2 - self.phi4(a2)) / exp(self._log_scale(a2))
        a = a2 - self.phi2(b)
        return concat([a, b], axis=u.ndim - 3)

    def named_parameters(self, prefix: str = "block"):
        for name in ("phi2", "phi3", "phi4"):
            yield from getattr(self, name).named_parameters(f"{prefix}.{name}")


def block_forward(blk: InvertibleBlock, u) -> Tensor:
    return blk.forward(u)


def block_inverse(blk: InvertibleBlock, u) -> Tensor:
    return blk.inverse(u)
