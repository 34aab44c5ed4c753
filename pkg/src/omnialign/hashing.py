"""64-bit FNV-1a over byte buffers (JIT-compiled; the pure loop is far too slow in Python)."""

from __future__ import annotations

import numba
import numpy as np

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


@numba.njit(cache=True)
def _fnv1a(data, h):
    prime = np.uint64(0x100000001B3)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def fnv1a64(data: bytes | bytearray | memoryview | np.ndarray, seed: int | None = None) -> int:
    """FNV-1a 64 of ``data``; ``seed`` continues a previous digest."""
    if isinstance(data, np.ndarray):
        buf = np.ascontiguousarray(data).view(np.uint8).ravel()
    else:
        buf = np.frombuffer(data, dtype=np.uint8)
    h = FNV_OFFSET if seed is None else np.uint64(seed)
    return int(_fnv1a(buf, h))
