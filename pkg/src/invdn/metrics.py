"""PSNR, SSIM and AKLD, plus a small report container."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MetricError

AKLD_BINS = 256
AKLD_ALPHA = 1e-6


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; ``inf`` when identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the trailing two axes
    k = len(g)
    h, w = x.shape[-2:]
    rows = sum(g[i] * x[..., i : h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[..., :, j : w - k + 1 + j] for j in range(k))


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window SSIM on [0, 1] data, averaged over valid pixels and channels.

    Accepts (H, W) or (C, H, W) arrays.
    """
    a, b = _pair(a, b)
    if a.ndim not in (2, 3):
        raise DimensionError(f"ssim expects (H,W) or (C,H,W), got {a.shape}")
    if min(a.shape[-2:]) < window:
        raise MetricError(f"image {a.shape[-2:]} smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    c1, c2 = k1**2, k2**2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def residual_histogram(residual: np.ndarray, bins: int = AKLD_BINS, alpha: float = AKLD_ALPHA) -> np.ndarray:
    """Smoothed probability histogram of a residual over [-1, 1]."""
    counts, _ = np.histogram(residual, bins=bins, range=(-1.0, 1.0))
    return (counts + alpha) / (counts.sum() + alpha * bins)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def akld(real_noisy, clean, generated_noisy) -> float:
    """Average KL(real || generated) between histograms of noise residuals.

    Residuals are taken against the clean image, histogrammed per channel and
    the divergence is averaged over channels and images.
    """
    real_noisy, clean, generated_noisy = list(real_noisy), list(clean), list(generated_noisy)
    if not real_noisy:
        raise MetricError("akld needs at least one image")
    if not len(real_noisy) == len(clean) == len(generated_noisy):
        raise MetricError("akld inputs must be aligned triplets")
    scores = []
    for r, c, g in zip(real_noisy, clean, generated_noisy):
        r, c = _pair(r, c)
        g, _ = _pair(g, c)
        if r.ndim == 2:
            r, c, g = r[None], c[None], g[None]
        for ch in range(r.shape[0]):
            p = residual_histogram(r[ch] - c[ch])
            q = residual_histogram(g[ch] - c[ch])
            scores.append(kl_divergence(p, q))
    return float(np.mean(scores))


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    noisy_psnr: list = field(default_factory=list)
    akld: float | None = None

    def add(self, name: str, psnr_db: float, ssim_score: float, noisy_psnr_db: float | None = None) -> None:
        self.names.append(name)
        self.psnr.append(psnr_db)
        self.ssim.append(ssim_score)
        self.noisy_psnr.append(noisy_psnr_db)

    def aggregate(self) -> dict:
        out = {
            "images": len(self.names),
            "psnr": float(np.mean(self.psnr)) if self.psnr else None,
            "ssim": float(np.mean(self.ssim)) if self.ssim else None,
        }
        if any(v is not None for v in self.noisy_psnr):
            out["noisy_psnr"] = float(np.mean([v for v in self.noisy_psnr if v is not None]))
        if self.akld is not None:
            out["akld"] = self.akld
        return out

    def lines(self) -> list[str]:
        """One JSON object per image, then one aggregate line."""
        rows = []
        for n, p, s, q in zip(self.names, self.psnr, self.ssim, self.noisy_psnr):
            row = {"image": n, "psnr": p, "ssim": s}
            if q is not None:
                row["noisy_psnr"] = q
            rows.append(json.dumps(row))
        rows.append(json.dumps({"aggregate": self.aggregate()}))
        return rows

    def write_table(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t")
            w.writerow(["image", "psnr", "ssim", "noisy_psnr"])
            for n, p, s, q in zip(self.names, self.psnr, self.ssim, self.noisy_psnr):
                w.writerow([n, f"{p:.6f}", f"{s:.6f}", "" if q is None else f"{q:.6f}"])
            agg = self.aggregate()
            w.writerow(["MEAN", f"{agg['psnr']:.6f}" if agg["psnr"] is not None else "",
                        f"{agg['ssim']:.6f}" if agg["ssim"] is not None else "",
                        f"{agg['noisy_psnr']:.6f}" if "noisy_psnr" in agg else ""])
            if self.akld is not None:
                w.writerow(["AKLD", f"{self.akld:.6f}", "", ""])
