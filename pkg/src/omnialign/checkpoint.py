"""OLMC checkpoints: named parameters, optimizer moments, freezing flags and training state.

Layout (little-endian)::

    b"OLMC" | u32 version | u32 metadata length | metadata (UTF-8 JSON, sorted keys)
    u32 entry count
    entries: u16 name length | name | u8 kind (0 param, 1 first moment, 2 second moment)
             | u8 dtype (0 f32, 1 f64) | u8 frozen | u8 ndim | u32 dims[ndim] | u64 byte length | raw values
    u64 FNV-1a of every preceding byte
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data.manifest import atomic_write_bytes
from .hashing import fnv1a64
from .numerics import AdamW, Module

MAGIC = b"OLMC"
VERSION = 1
KINDS = ("param", "m", "v")
DTYPES = ("<f4", "<f8")


class CheckpointError(ValueError):
    """Base class for checkpoint read errors."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class TrainState:
    """Everything besides tensors needed to resume a run exactly."""

    phase: str = ""
    step: int = 0
    seed: int = 0
    config_hash: str = ""
    optimizer_t: int = 0
    losses: dict[str, list[float]] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class Entry:
    name: str
    kind: str
    frozen: bool
    array: np.ndarray


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.float64:
        return 1
    raise TypeError(f"unsupported checkpoint dtype {arr.dtype}")


def encode_checkpoint(metadata: dict, entries: list[Entry]) -> bytes:
    out = bytearray(MAGIC)
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += struct.pack("<II", VERSION, len(meta)) + meta
    out += struct.pack("<I", len(entries))
    for e in entries:
        name = e.name.encode("utf-8")
        code = _dtype_code(e.array)
        raw = np.ascontiguousarray(e.array, dtype=DTYPES[code]).tobytes()
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<BBBB", KINDS.index(e.kind), code, int(e.frozen), e.array.ndim)
        out += struct.pack(f"<{e.array.ndim}I", *e.array.shape)
        out += struct.pack("<Q", len(raw)) + raw
    out += struct.pack("<Q", fnv1a64(bytes(out)))
    return bytes(out)


def decode_checkpoint(data: bytes) -> tuple[dict, list[Entry]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("not an OLMC checkpoint (bad magic)")
    if len(data) < 24:
        raise CheckpointIntegrityError("checkpoint is truncated")
    body, (trailer,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != trailer:
        raise CheckpointIntegrityError("checkpoint integrity hash mismatch (truncated or corrupted file)")
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
    pos = 12
    metadata = json.loads(body[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    entries = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + n].decode("utf-8")
        pos += n
        kind, code, frozen, ndim = struct.unpack_from("<BBBB", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        arr = np.frombuffer(body, dtype=DTYPES[code], count=nbytes // np.dtype(DTYPES[code]).itemsize, offset=pos)
        pos += nbytes
        entries.append(Entry(name, KINDS[kind], bool(frozen), arr.reshape(shape).astype(DTYPES[code][1:])))
    if pos != len(body):
        raise CheckpointFormatError(f"{len(body) - pos} unexpected trailing bytes in checkpoint")
    return metadata, entries


def _metadata(state: TrainState) -> dict:
    meta = asdict(state)
    meta["rng"] = {"seed": state.seed, "step": state.step}
    return meta


def save_checkpoint(model: Module, state: TrainState, path: str | Path, optimizer: AdamW | None = None) -> Path:
    """Atomically write ``model`` (and optimizer moments) to ``path``."""
    path = Path(path)
    names = [name for name, _ in model.named_parameters()]
    if len(set(names)) != len(names):
        raise ValueError("parameter names are not unique; call assign_names() first")
    entries = [Entry(name, "param", p.frozen, p.data) for name, p in model.named_parameters()]
    if optimizer is not None:
        state.optimizer_t = optimizer.t
        for kind, moments in (("m", optimizer.m), ("v", optimizer.v)):
            for name in names:
                if name in moments:
                    entries.append(Entry(name, kind, False, moments[name]))
    try:
        atomic_write_bytes(path, encode_checkpoint(_metadata(state), entries))
    except OSError as exc:
        raise OSError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, list[Entry]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def state_from_metadata(meta: dict) -> TrainState:
    fields = {k: meta[k] for k in ("phase", "step", "seed", "config_hash", "optimizer_t", "losses", "extra")
              if k in meta}
    return TrainState(**fields)


def apply_entries(model: Module, entries: list[Entry], optimizer: AdamW | None = None, strict: bool = True) -> None:
    params = dict(model.named_parameters())
    seen = set()
    for e in entries:
        if e.kind != "param":
            continue
        if e.name not in params:
            if strict:
                raise CheckpointShapeError(f"checkpoint parameter {e.name!r} does not exist in the model")
            continue
        p = params[e.name]
        if p.shape != e.array.shape:
            raise CheckpointShapeError(
                f"parameter {e.name!r}: checkpoint shape {e.array.shape} != model shape {p.shape}")
        p.data[...] = e.array
        p.frozen = e.frozen
        seen.add(e.name)
    missing = sorted(set(params) - seen)
    if missing and strict:
        raise CheckpointShapeError(f"checkpoint lacks parameters {missing[:5]}")
    if optimizer is not None:
        for e in entries:
            if e.kind in ("m", "v") and e.name in params:
                target = optimizer.m if e.kind == "m" else optimizer.v
                if e.name in target:
                    target[e.name][...] = e.array


def load_checkpoint(path: str | Path, model: Module, optimizer: AdamW | None = None,
                    strict: bool = True) -> TrainState:
    meta, entries = read_checkpoint(path)
    apply_entries(model, entries, optimizer, strict)
    state = state_from_metadata(meta)
    if optimizer is not None:
        optimizer.t = state.optimizer_t
    return state
