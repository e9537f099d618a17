import pytest

from invdn.config import RunConfig, parse_value, read_config_file, worker_count
from invdn.errors import ConfigError
from invdn.model import ModelConfig


def write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return p


def test_defaults():
    rc = RunConfig.resolve()
    assert rc.model_config() == ModelConfig()
    assert rc.iters == 20_000
    assert rc.provenance["lr0"] == "default"


def test_file_then_cli_precedence(tmp_path):
    path = write(tmp_path, "# comment\npatch = 64\nbatch_size = 2  # trailing\nseed = 3\nbetas = 0.5, 0.9\n")
    rc = RunConfig.resolve(path, {"seed": 11, "iters": None})
    tc = rc.train_config()
    assert tc.patch == 64 and tc.batch_size == 2 and tc.seed == 11
    assert tc.betas == (0.5, 0.9)
    assert rc.provenance["patch"].startswith("file:")
    assert rc.provenance["seed"] == "cli"
    assert rc.provenance["iters"] == "default"
    assert any("patch = 64" in line for line in rc.describe())


@pytest.mark.parametrize(
    "text",
    ["patch 64\n", "bogus = 1\n", "patch = 1.5\n", "patch = 8\npatch = 16\n", "augment = maybe\n", "betas = 1\n"],
)
def test_bad_files(tmp_path, text):
    with pytest.raises(ConfigError):
        read_config_file(write(tmp_path, text))


def test_invalid_values_surface_at_resolve(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.resolve(write(tmp_path, "num_downscale_blocks = 0\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.resolve(tmp_path / "absent.cfg")


def test_value_parsing():
    assert parse_value("augment", "no") is False
    assert parse_value("iters", "2e3") == 2000
    assert parse_value("transform_kind", " squeeze ") == "squeeze"
    assert parse_value("lr0", 0.5) == 0.5


def test_worker_count(monkeypatch):
    monkeypatch.setenv("INVDN_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("INVDN_WORKERS", "zero")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.delenv("INVDN_WORKERS")
    assert worker_count() >= 1
