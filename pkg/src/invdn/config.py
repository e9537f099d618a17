"""Run configuration: defaults < config file < command-line flags, with provenance.

Config files are line-oriented ``key = value`` text. Blank lines and lines
starting with ``#`` are ignored; a trailing ``# comment`` is stripped. Keys are
the fields of ModelConfig and TrainConfig plus ``iters``. Pair-valued keys
(``betas``, ``loss_weights``) take two comma-separated numbers; booleans
accept true/false/yes/no/1/0. Example::

    # desk-scale run
    num_downscale_blocks = 2
    blocks_per_scale = 8
    patch = 64
    batch_size = 2
    sigma_min = 25
    sigma_max = 25
    m_forw = 2
    m_back = 1
"""

from __future__ import annotations

import os
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

WORKERS_ENV = "INVDN_WORKERS"

_RUN_DEFAULTS = {"iters": 20_000}


def _field_types(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


_TYPES = {**_field_types(ModelConfig), **_field_types(TrainConfig), "iters": int}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text) -> object:
    if key not in _TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(text, str):
        return text
    kind = _TYPES[key]
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is int:
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text.strip()
        if typing.get_origin(kind) is tuple:
            parts = [float(p) for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated numbers")
            return tuple(parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None
    raise ConfigError(f"unsupported type for {key!r}")


def read_config_file(path) -> dict[str, object]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    out: dict[str, object] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @classmethod
    def resolve(cls, config_path=None, overrides: dict | None = None) -> "RunConfig":
        values, prov = {}, {}
        for src in (ModelConfig(), TrainConfig()):
            for f in fields(src):
                values[f.name] = getattr(src, f.name)
                prov[f.name] = "default"
        for k, v in _RUN_DEFAULTS.items():
            values[k], prov[k] = v, "default"
        if config_path is not None:
            for k, v in read_config_file(config_path).items():
                values[k], prov[k] = v, f"file:{config_path}"
        for k, v in (overrides or {}).items():
            if v is None:
                continue
            values[k], prov[k] = parse_value(k, v), "cli"
        rc = cls(values, prov)
        rc.model_config()
        rc.train_config()
        return rc

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: self.values[k] for k in _MODEL_KEYS})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: self.values[k] for k in _TRAIN_KEYS})

    @property
    def iters(self) -> int:
        return int(self.values["iters"])

    def describe(self) -> list[str]:
        return [f"{k} = {self.values[k]!r}  [{self.provenance[k]}]" for k in sorted(self.values)]


def worker_count(default: int | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1")
        return n
    return default or min(4, os.cpu_count() or 1)
