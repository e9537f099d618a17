import json
import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from invdn.errors import DimensionError, MetricError
from invdn.metrics import MetricReport, akld, kl_divergence, psnr, residual_histogram, ssim


class TestPSNR:
    def test_identical_is_infinite(self, rng):
        x = rng.uniform(size=(3, 8, 8))
        assert psnr(x, x) == math.inf

    def test_one_level_everywhere(self):
        a = np.full((3, 16, 16), 0.5)
        assert psnr(a, a + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-9)
        assert 20 * math.log10(255) == pytest.approx(48.131, abs=1e-3)

    def test_gaussian_noise_level(self, rng):
        vals = []
        for _ in range(20):
            clean = rng.uniform(0.3, 0.7, size=(3, 64, 64))
            vals.append(psnr(clean + rng.standard_normal(clean.shape) * 25 / 255, clean))
        assert np.mean(vals) == pytest.approx(20 * math.log10(255 / 25), abs=0.3)
        assert np.mean(vals) == pytest.approx(20.17, abs=0.3)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSSIM:
    def test_identical(self, rng):
        x = rng.uniform(size=(3, 32, 32))
        assert ssim(x, x) == pytest.approx(1.0)

    def test_constants(self):
        a = np.full((16, 16), 0.3)
        assert ssim(a, a) == pytest.approx(1.0)

    def test_inverted_high_contrast(self):
        yy, xx = np.mgrid[:64, :64]
        a = ((xx // 8 + yy // 8) % 2).astype(float) * 0.9 + 0.05
        score = ssim(a, 1 - a)
        ref = structural_similarity(a, 1 - a, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
        assert score < 0.5
        assert score == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("noise", [0.02, 0.1, 0.3])
    def test_matches_reference_implementation(self, rng, noise):
        a = rng.uniform(size=(3, 40, 48))
        b = np.clip(a + rng.standard_normal(a.shape) * noise, 0, 1)
        ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, channel_axis=0)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)

    def test_too_small(self):
        with pytest.raises(MetricError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def discretized_gaussian(sigma, bins=256, alpha=1e-6, n=None):
    edges = np.linspace(-1, 1, bins + 1)
    cdf = np.array([0.5 * (1 + math.erf(e / (sigma * math.sqrt(2)))) for e in edges])
    mass = np.diff(cdf)
    mass = mass / mass.sum()
    if n is not None:
        mass = (mass * n + alpha) / (n + alpha * bins)
    return mass


class TestAKLD:
    def test_identical_is_zero(self, rng):
        clean = [rng.uniform(size=(3, 16, 16))]
        noisy = [c + rng.standard_normal(c.shape) * 0.1 for c in clean]
        assert akld(noisy, clean, noisy) == 0.0

    def test_mirrored_asymmetric_residual(self, rng):
        clean = np.full((1, 64, 64), 0.5)
        resid = rng.exponential(0.05, size=clean.shape)
        assert akld([clean + resid], [clean], [clean - resid]) > 0

    def test_gaussian_closed_form(self, rng):
        clean = np.zeros((3, 256, 256))
        real = clean + rng.standard_normal(clean.shape) * 0.1
        gen = clean + rng.standard_normal(clean.shape) * 0.2
        n = 256 * 256
        p, q = discretized_gaussian(0.1, n=n), discretized_gaussian(0.2, n=n)
        expected = float(np.sum(p * np.log(p / q)))
        continuous = math.log(2) + 0.01 / (2 * 0.04) - 0.5
        assert expected == pytest.approx(continuous, rel=0.02)
        assert akld([real], [clean], [gen]) == pytest.approx(expected, rel=0.05)

    def test_histogram_is_smoothed_distribution(self):
        h = residual_histogram(np.zeros(10))
        assert h.sum() == pytest.approx(1.0)
        assert h.min() > 0

    def test_kl_of_equal_distributions(self):
        p = np.full(4, 0.25)
        assert kl_divergence(p, p) == 0.0

    def test_empty(self):
        with pytest.raises(MetricError):
            akld([], [], [])

    def test_misaligned(self):
        with pytest.raises(MetricError):
            akld([np.zeros((4, 4))], [np.zeros((4, 4))], [])


class TestReport:
    def test_lines_and_table(self, tmp_path):
        r = MetricReport()
        r.add("a.png", 30.0, 0.9, 20.0)
        r.add("b.png", 32.0, 0.8, 21.0)
        r.akld = 0.25
        lines = r.lines()
        assert json.loads(lines[0]) == {"image": "a.png", "psnr": 30.0, "ssim": 0.9, "noisy_psnr": 20.0}
        agg = json.loads(lines[-1])["aggregate"]
        assert agg["psnr"] == 31.0 and agg["ssim"] == pytest.approx(0.85) and agg["akld"] == 0.25
        r.write_table(tmp_path / "m.tsv")
        rows = (tmp_path / "m.tsv").read_text().splitlines()
        assert rows[0].split("\t") == ["image", "psnr", "ssim", "noisy_psnr"]
        assert rows[3].startswith("MEAN\t31.000000")
        assert rows[4].startswith("AKLD\t0.250000")
