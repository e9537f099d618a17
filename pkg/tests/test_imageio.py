import numpy as np
import png
import pytest

from invdn.errors import DimensionError, ImageIOError
from invdn.imageio import atomic_path, ensure_channels, load_image, save_image


@pytest.mark.parametrize("channels", [1, 3])
def test_eight_bit_round_trip(tmp_path, rng, channels):
    img = rng.uniform(size=(channels, 9, 7))
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    assert back.shape == img.shape and back.dtype == np.float32
    assert np.abs(back - img).max() <= 1 / 510 + 1e-7


def test_sixteen_bit_round_trip(tmp_path, rng):
    img = rng.uniform(size=(3, 5, 6))
    save_image(img, tmp_path / "a.png", bitdepth=16)
    assert np.abs(load_image(tmp_path / "a.png") - img).max() <= 1 / 131070 + 1e-7


def test_quantization_rounds_half_up(tmp_path):
    img = np.array([[[0.5 / 255, 1.49 / 255, -0.2, 1.3]]])
    save_image(img, tmp_path / "q.png")
    _, _, rows, _ = png.Reader(filename=str(tmp_path / "q.png")).read()
    assert [list(r) for r in rows] == [[1, 1, 0, 255]]


def test_two_dimensional_input_is_gray(tmp_path):
    save_image(np.full((4, 4), 0.5), tmp_path / "g.png")
    assert load_image(tmp_path / "g.png").shape == (1, 4, 4)


def test_alpha_dropped(tmp_path):
    rows = [[10, 20, 30, 255] * 2] * 2
    with open(tmp_path / "rgba.png", "wb") as fh:
        png.Writer(2, 2, alpha=True, greyscale=False).write(fh, rows)
    img = load_image(tmp_path / "rgba.png")
    assert img.shape == (3, 2, 2)
    np.testing.assert_allclose(img[:, 0, 0], np.array([10, 20, 30]) / 255)


def test_gray_replicated(rng):
    g = rng.uniform(size=(1, 4, 4)).astype(np.float32)
    out = ensure_channels(g, 3)
    assert out.shape == (3, 4, 4)
    np.testing.assert_array_equal(out[2], g[0])
    with pytest.raises(DimensionError):
        ensure_channels(np.zeros((2, 4, 4)), 3)


def test_missing_file(tmp_path):
    with pytest.raises(ImageIOError, match="nope.png"):
        load_image(tmp_path / "nope.png")


def test_truncated_file(tmp_path, rng):
    save_image(rng.uniform(size=(3, 32, 32)), tmp_path / "t.png")
    data = (tmp_path / "t.png").read_bytes()
    (tmp_path / "t.png").write_bytes(data[: len(data) // 2])
    with pytest.raises(ImageIOError, match="t.png"):
        load_image(tmp_path / "t.png")


def test_not_a_png(tmp_path):
    (tmp_path / "x.png").write_bytes(b"GIF89a not really")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "x.png")


def test_unsupported_shape_and_depth(tmp_path):
    with pytest.raises(DimensionError):
        save_image(np.zeros((2, 4, 4)), tmp_path / "x.png")
    with pytest.raises(ImageIOError):
        save_image(np.zeros((3, 4, 4)), tmp_path / "x.png", bitdepth=12)


def test_failed_write_leaves_no_file(tmp_path):
    target = tmp_path / "out.bin"
    with pytest.raises(RuntimeError):
        with atomic_path(target) as tmp:
            tmp.write_bytes(b"partial")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
