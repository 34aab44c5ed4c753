"""OLMF dataset manifests: per-modality item records plus little-endian f32 payloads.

Layout (all integers little-endian)::

    b"OLMF" | u32 version | u8 modality tag | u16 split length | split (UTF-8) | u32 item count
    item records:  u8 modality tag | u8 ndim | u32 dims[ndim] | u64 payload offset | u64 payload length
                   | u64 payload FNV-1a | u32 text length | text (UTF-8 JSON: caption, qa, scene)
    payload blobs (f32, offsets relative to the start of the blob area)
    u64 FNV-1a of every preceding byte
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..hashing import fnv1a64
from ..modality import Modality

MAGIC = b"OLMF"
VERSION = 1


class ManifestError(ValueError):
    """Base class for manifest read errors."""


class ManifestFormatError(ManifestError):
    pass


class UnsupportedVersionError(ManifestError):
    pass


class HashMismatchError(ManifestError):
    def __init__(self, message: str, item: int | None = None):
        super().__init__(message)
        self.item = item


class TruncatedManifestError(ManifestError):
    pass


@dataclass
class ManifestItem:
    payload: np.ndarray
    caption: str
    qa: list[tuple[str, str]] = field(default_factory=list)
    scene: dict | None = None

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype="<f4")
        self.qa = [tuple(pair) for pair in self.qa]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ManifestItem):
            return NotImplemented
        return (self.payload.shape == other.payload.shape
                and self.payload.tobytes() == other.payload.tobytes()
                and self.caption == other.caption and self.qa == other.qa and self.scene == other.scene)


@dataclass
class DatasetManifest:
    modality: Modality
    items: list[ManifestItem]
    split: str = "train"
    version: int = VERSION

    def __post_init__(self):
        self.modality = Modality.parse(self.modality)

    def __len__(self) -> int:
        return len(self.items)


def encode_manifest(manifest: DatasetManifest) -> bytes:
    if not manifest.items:
        raise ValueError("a manifest needs at least one item")
    tag = manifest.modality.tag
    split = manifest.split.encode("utf-8")
    head = bytearray(MAGIC)
    head += struct.pack("<IBH", manifest.version, tag, len(split)) + split
    head += struct.pack("<I", len(manifest.items))
    blobs = []
    offset = 0
    for item in manifest.items:
        blob = np.ascontiguousarray(item.payload, dtype="<f4").tobytes()
        text = json.dumps({"caption": item.caption, "qa": [list(p) for p in item.qa], "scene": item.scene},
                          sort_keys=True, ensure_ascii=False).encode("utf-8")
        shape = item.payload.shape
        head += struct.pack("<BB", tag, len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
        head += struct.pack("<QQQI", offset, len(blob), fnv1a64(blob), len(text)) + text
        blobs.append(blob)
        offset += len(blob)
    body = bytes(head) + b"".join(blobs)
    return body + struct.pack("<Q", fnv1a64(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedManifestError(f"manifest ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_manifest(data: bytes) -> DatasetManifest:
    if len(data) < 4 or data[:4] != MAGIC:
        raise ManifestFormatError("not an OLMF manifest (bad magic)")
    # The trailing hash is excluded from the region parsed below.
    if len(data) < 12:
        raise TruncatedManifestError("manifest is shorter than its fixed header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"manifest version {version} is not supported (expected {VERSION})")
    body = data[:-8]
    r = _Reader(body)
    r.take(8)
    tag, split_len = r.unpack("<BH")
    split = r.take(split_len).decode("utf-8")
    (count,) = r.unpack("<I")
    records = []
    for i in range(count):
        item_tag, ndim = r.unpack("<BB")
        if item_tag != tag:
            raise ManifestFormatError(f"item {i} has modality tag {item_tag}, manifest has {tag}")
        shape = r.unpack(f"<{ndim}I")
        offset, length, digest, text_len = r.unpack("<QQQI")
        text = json.loads(r.take(text_len).decode("utf-8"))
        if length != 4 * int(np.prod(shape)):
            raise ManifestFormatError(f"item {i}: payload length {length} does not match shape {shape}")
        records.append((shape, offset, length, digest, text))
    blob_start = r.pos
    items = []
    for i, (shape, offset, length, digest, text) in enumerate(records):
        start = blob_start + offset
        if start + length > len(body):
            raise TruncatedManifestError(f"payload of item {i} runs past the end of the file")
        blob = body[start:start + length]
        if fnv1a64(blob) != digest:
            raise HashMismatchError(f"payload hash mismatch in item {i}", item=i)
        payload = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        items.append(ManifestItem(payload, text["caption"], [tuple(p) for p in text["qa"]], text["scene"]))
    (trailer,) = struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != trailer:
        raise HashMismatchError("manifest hash mismatch (header or trailing bytes corrupted)")
    return DatasetManifest(Modality.from_tag(tag), items, split, version)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(items: Sequence[ManifestItem] | DatasetManifest, path: str | Path,
                   modality: Modality | str | None = None, split: str = "train") -> DatasetManifest:
    manifest = items if isinstance(items, DatasetManifest) else DatasetManifest(modality, list(items), split)
    atomic_write_bytes(path, encode_manifest(manifest))
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return decode_manifest(path.read_bytes())


def manifest_digest(path: str | Path) -> str:
    return f"{fnv1a64(Path(path).read_bytes()):016x}"
