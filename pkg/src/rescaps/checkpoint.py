"""Binary checkpoint archive.

Layout (all integers little-endian)::

    b"RCAP" | u32 version | u32 config length | config text (UTF-8)
    then per tensor: u16 name length | name | u8 rank | u32 dims... | f64 data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ArchitectureConfig, parameter_shapes
from .tensor import Tensor

MAGIC = b"RCAP"
VERSION = 1
OPTIM_PREFIX = "optim."


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ArchitectureConfig
    seed: int
    meta: dict[str, str] = field(default_factory=dict)
    extras: dict[str, np.ndarray] = field(default_factory=dict)


def config_text(cfg: ArchitectureConfig, seed: int, meta: dict[str, str] | None = None) -> str:
    lines = [f"seed = {seed}"]
    lines += [f"model.{k} = {v}" for k, v in cfg.to_items()]
    lines += [f"meta.{k} = {v}" for k, v in sorted((meta or {}).items())]
    return "\n".join(lines) + "\n"


def encode(params: dict[str, Tensor], cfg: ArchitectureConfig, seed: int = 0,
           meta: dict[str, str] | None = None,
           extras: dict[str, np.ndarray] | None = None) -> bytes:
    text = config_text(cfg, seed, meta).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(text)), text]
    tensors = [(name, t.data) for name, t in params.items()]
    tensors += [(OPTIM_PREFIX + name, arr) for name, arr in (extras or {}).items()]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def checkpoint_save(params: dict[str, Tensor], cfg: ArchitectureConfig, path, seed: int = 0,
                    meta: dict[str, str] | None = None,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(params, cfg, seed, meta, extras))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.source}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    @property
    def done(self) -> bool:
        return self.pos >= len(self.buf)


def decode(buf: bytes, source: str = "<checkpoint>") -> Checkpoint:
    r = _Reader(buf, source)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{source}: bad magic, not an RCAP checkpoint")
    version, text_len = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    text = r.take(text_len, "config block").decode("utf-8")

    seed, arch, meta = 0, {}, {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = (s.strip() for s in line.partition("="))
        if key == "seed":
            seed = int(value)
        elif key.startswith("model."):
            arch[key[len("model."):]] = value
        elif key.startswith("meta."):
            meta[key[len("meta."):]] = value
        else:
            raise CheckpointError(f"{source}: unexpected config key {key!r}")
    try:
        cfg = ArchitectureConfig.from_items(arch)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{source}: invalid architecture block: {exc}") from None

    tensors: dict[str, np.ndarray] = {}
    while not r.done:
        (name_len,) = struct.unpack("<H", r.take(2, "tensor name length"))
        name = r.take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(8 * count, f"data of {name}"), dtype="<f8")
        tensors[name] = data.reshape(dims).astype(np.float64)

    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(cfg):
        if name not in tensors:
            raise CheckpointError(f"{source}: missing parameter {name}")
        arr = tensors.pop(name)
        if arr.shape != shape:
            raise CheckpointError(
                f"{source}: parameter {name} has dims {arr.shape}, architecture declares {shape}"
            )
        params[name] = Tensor(arr, requires_grad=True, name=name)
    extras = {}
    for name, arr in tensors.items():
        if not name.startswith(OPTIM_PREFIX):
            raise CheckpointError(f"{source}: unexpected tensor {name}")
        extras[name[len(OPTIM_PREFIX):]] = arr
    return Checkpoint(params, cfg, seed, meta, extras)


def checkpoint_load(path) -> Checkpoint:
    path = Path(path)
    return decode(path.read_bytes(), str(path))
