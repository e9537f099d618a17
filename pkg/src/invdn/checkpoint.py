"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    magic        8 bytes   b"INVDNCK\\0"
    version      u32
    header_len   u32
    header       UTF-8 JSON: {"model": {...}, "iteration", "seed", "adam_step", "train"}
    n_entries    u32
    entries      n_entries x (name_len u16, name, ndim u8, dims u32*ndim, offset u64, nbytes u64)
    payload_len  u64
    payload      float32 little-endian, tensors at their recorded offsets
    crc32        u32 over every preceding byte

Entry names are ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointConfigMismatch, CheckpointError, ConfigError
from .imageio import atomic_path
from .model import InvDNModel, ModelConfig
from .training import AdamState

MAGIC = b"INVDNCK\0"
VERSION = 1


@dataclass
class Checkpoint:
    model: InvDNModel
    adam: AdamState | None
    iteration: int
    seed: int = 0
    train: dict | None = None


def encode_checkpoint(model: InvDNModel, adam: AdamState | None = None, iteration: int = 0,
                      seed: int = 0, train: dict | None = None) -> bytes:
    names = [n for n, _ in model.named_parameters()]
    params = model.parameters()
    tensors: list[tuple[str, np.ndarray]] = [(f"param/{n}", p.data) for n, p in zip(names, params)]
    if adam is not None and adam.m:
        tensors += [(f"adam.m/{n}", m) for n, m in zip(names, adam.m)]
        tensors += [(f"adam.v/{n}", v) for n, v in zip(names, adam.v)]
    header = {
        "model": model.config.to_dict(),
        "iteration": int(iteration),
        "seed": int(seed),
        "adam_step": int(adam.step) if adam is not None else None,
        "train": train,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    index = bytearray(struct.pack("<I", len(tensors)))
    payload = bytearray()
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        nb = name.encode()
        index += struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        index += struct.pack(f"<{arr.ndim}I", *arr.shape)
        index += struct.pack("<QQ", len(payload), len(blob))
        payload += blob
    body = MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + bytes(index)
    body += struct.pack("<Q", len(payload)) + bytes(payload)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(model: InvDNModel, adam: AdamState | None, iteration: int, path,
                    seed: int = 0, train: dict | None = None) -> None:
    data = encode_checkpoint(model, adam, iteration, seed, train)
    path = Path(path)
    try:
        with atomic_path(path) as tmp:
            tmp.write_bytes(data)
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc})") from None


class _Cursor:
    def __init__(self, data: bytes, where: str):
        self.data, self.pos, self.where = data, 0, where

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError(f"{self.where}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, where: str = "<bytes>") -> Checkpoint:
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError(f"{where}: truncated checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{where}: not an InvDN checkpoint (bad magic)")
    cur = _Cursor(data, where)
    cur.take(len(MAGIC))
    version, hlen = cur.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{where}: unsupported checkpoint version {version} (expected {VERSION})")
    body, crc = data[:-4], data[-4:]
    if struct.unpack("<I", crc)[0] != zlib.crc32(body) & 0xFFFFFFFF:
        raise CheckpointError(f"{where}: checksum mismatch (corrupt or truncated file)")
    try:
        header = json.loads(cur.take(hlen).decode())
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{where}: bad header ({exc})") from None

    (count,) = cur.unpack("<I")
    entries = []
    for _ in range(count):
        (nlen,) = cur.unpack("<H")
        name = cur.take(nlen).decode(errors="replace")
        (ndim,) = cur.unpack("<B")
        shape = cur.unpack(f"<{ndim}I")
        offset, nbytes = cur.unpack("<QQ")
        entries.append((name, shape, offset, nbytes))
    (plen,) = cur.unpack("<Q")
    payload = cur.take(plen)
    if cur.pos != len(body):
        raise CheckpointError(f"{where}: trailing bytes after payload")
    expected_end = 0
    for name, shape, offset, nbytes in entries:
        if offset != expected_end or nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{where}: corrupt index entry {name!r}")
        expected_end += nbytes
    if expected_end != plen:
        raise CheckpointError(f"{where}: index covers {expected_end} bytes, payload has {plen}")
    arrays = {
        name: np.frombuffer(payload, dtype="<f4", count=nb // 4, offset=off).reshape(shape).astype(np.float32)
        for name, shape, off, nb in entries
    }

    model = InvDNModel(config)
    names = [n for n, _ in model.named_parameters()]
    for name, p in model.named_parameters():
        arr = arrays.get(f"param/{name}")
        if arr is None:
            raise CheckpointError(f"{where}: missing parameter {name!r} for config {config}")
        if arr.shape != p.shape:
            raise CheckpointError(f"{where}: parameter {name!r} has shape {arr.shape}, config needs {p.shape}")
        p.data = arr
    extra = {n for n in arrays if n.startswith("param/")} - {f"param/{n}" for n in names}
    if extra:
        raise CheckpointError(f"{where}: parameters not in config: {sorted(extra)[:3]}")

    adam = None
    if header.get("adam_step") is not None:
        try:
            m = [arrays[f"adam.m/{n}"] for n in names]
            v = [arrays[f"adam.v/{n}"] for n in names]
        except KeyError as exc:
            if int(header["adam_step"]) == 0 and not any(k.startswith("adam.") for k in arrays):
                m, v = [np.zeros_like(p.data) for p in model.parameters()], [np.zeros_like(p.data) for p in model.parameters()]
            else:
                raise CheckpointError(f"{where}: missing optimizer state {exc}") from None
        adam = AdamState(m, v, int(header["adam_step"]))
    return Checkpoint(model, adam, int(header.get("iteration", 0)), int(header.get("seed", 0)), header.get("train"))


def read_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from None
    ckpt = decode_checkpoint(data, str(path))
    if expected_config is not None and ckpt.model.config != expected_config:
        raise CheckpointConfigMismatch(
            f"{path}: checkpoint config {ckpt.model.config} does not match requested {expected_config}"
        )
    return ckpt


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[InvDNModel, AdamState | None, int]:
    ckpt = read_checkpoint(path, expected_config)
    return ckpt.model, ckpt.adam, ckpt.iteration
