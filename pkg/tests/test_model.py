import numpy as np
import pytest

from helpers import randomize, worst_gradient_error
from invdn.errors import ConfigError, DimensionError
from invdn.model import InvDNModel, LatentSplit, ModelConfig, parameter_count
from invdn.tensor import Tensor, backward, no_grad


def subnet_params(cin, cout, hidden):
    return cin * hidden * 9 + hidden + hidden * hidden * 9 + hidden + hidden * cout * 9 + cout


def closed_form_count(cfg: ModelConfig) -> int:
    total, c = 0, cfg.input_channels
    for _ in range(cfg.num_downscale_blocks):
        block = subnet_params(3 * c, c, cfg.hidden_channels) + 2 * subnet_params(c, 3 * c, cfg.hidden_channels)
        total += cfg.blocks_per_scale * block
        c *= 4
    return total


def test_default_shapes():
    m = InvDNModel()
    out = m.forward(np.zeros((3, 64, 64), np.float32))
    assert isinstance(out, LatentSplit)
    assert out.lr.shape == (3, 16, 16)
    assert out.z.shape == (45, 16, 16)
    assert out.joined().shape == (48, 16, 16)


def test_single_conv_count():
    from invdn.invertible import Conv

    conv = Conv(9, 3, np.random.default_rng(0))
    assert sum(p.size for _, p in conv.named_parameters("c")) == 9 * 3 * 9 + 3 == 246


def test_default_parameter_count():
    assert parameter_count(InvDNModel()) == 861_000


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("blocks", [1, 8, 16])
def test_parameter_count_closed_form(n, blocks):
    cfg = ModelConfig(num_downscale_blocks=n, blocks_per_scale=blocks)
    assert parameter_count(InvDNModel(cfg)) == closed_form_count(cfg)


def test_constant_image_maps_to_scaled_low_band():
    m = InvDNModel()
    out = m.forward(np.full((3, 32, 32), 0.25, np.float32))
    np.testing.assert_allclose(out.lr.data, 1.0, atol=1e-6)
    np.testing.assert_allclose(out.z.data, 0.0, atol=1e-6)


def test_inverse_of_constant_latent():
    m = InvDNModel()
    x = m.inverse(np.ones((3, 8, 8), np.float32), np.zeros((45, 8, 8), np.float32)).data
    np.testing.assert_allclose(x, 0.25, atol=1e-6)


def test_round_trip_trained_like_weights(rng):
    m = randomize(InvDNModel(), rng, scale=0.03)
    x = rng.uniform(size=(2, 3, 32, 32)).astype(np.float32)
    with no_grad():
        s = m.forward(x)
        back = m.inverse(s.lr, s.z).data
    assert np.abs(back - x).max() < 1e-4


def test_forward_is_deterministic(rng):
    m = randomize(InvDNModel(), rng)
    x = rng.uniform(size=(3, 32, 32)).astype(np.float32)
    np.testing.assert_array_equal(m.transform(x).data, m.transform(x).data)


def test_same_seed_same_weights():
    a, b = InvDNModel(seed=3), InvDNModel(seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    c = InvDNModel(seed=4)
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


def test_final_convs_start_at_zero():
    for name, p in InvDNModel().named_parameters():
        if ".conv_out." in name:
            assert not p.data.any(), name


def test_parameter_names_are_unique():
    names = [n for n, _ in InvDNModel().named_parameters()]
    assert len(names) == len(set(names))
    assert names[0] == "scale0.block0.phi2.conv_in.weight"


def test_indivisible_extent_rejected():
    with pytest.raises(DimensionError):
        InvDNModel().forward(np.zeros((3, 30, 32), np.float32))


def test_wrong_channels_rejected():
    with pytest.raises(DimensionError):
        InvDNModel().forward(np.zeros((1, 32, 32), np.float32))


def test_inverse_shape_checks():
    m = InvDNModel()
    with pytest.raises(DimensionError):
        m.inverse(np.zeros((3, 8, 8), np.float32), np.zeros((44, 8, 8), np.float32))
    with pytest.raises(DimensionError):
        m.inverse(np.zeros((3, 8, 8), np.float32), np.zeros((45, 8, 4), np.float32))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_downscale_blocks=0),
        dict(blocks_per_scale=0),
        dict(hidden_channels=0),
        dict(input_channels=0),
        dict(transform_kind="dct"),
        dict(scale_bound=0.0),
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = ModelConfig(num_downscale_blocks=3, blocks_per_scale=16, transform_kind="squeeze")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.scale == 8
    assert cfg.output_channels == 192


def test_squeeze_variant_round_trip(rng):
    m = randomize(InvDNModel(ModelConfig(transform_kind="squeeze", blocks_per_scale=2)), rng)
    x = rng.uniform(size=(3, 16, 16)).astype(np.float32)
    s = m.forward(x)
    np.testing.assert_allclose(m.inverse(s.lr, s.z).data, x, atol=1e-5)


def test_one_scale_model_gradient(rng):
    cfg = ModelConfig(num_downscale_blocks=1, blocks_per_scale=2, hidden_channels=4, input_channels=1)
    m = randomize(InvDNModel(cfg), rng, scale=0.3).astype(np.float64)
    x = rng.uniform(size=(1, 4, 4))
    r = rng.standard_normal((4, 2, 2))
    xt = Tensor(x, requires_grad=True)
    backward((m.transform(xt) * Tensor(r)).sum())
    params = m.parameters()

    def f():
        with no_grad():
            return float(np.sum(m.transform(Tensor(x)).data * r))

    arrays = [p.data for p in params] + [x]
    grads = [p.grad for p in params] + [xt.grad]
    assert worst_gradient_error(f, arrays, grads, entries=6, rng=rng) < 1e-3
