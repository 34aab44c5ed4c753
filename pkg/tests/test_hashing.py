import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from omnialign.hashing import fnv1a64


def reference(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) % 2**64
    return h


def test_published_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


@settings(max_examples=50)
@given(st.binary(max_size=200))
def test_matches_pure_python(data):
    assert fnv1a64(data) == reference(data)


@given(st.binary(max_size=50), st.binary(max_size=50))
def test_seed_continues_digest(a, b):
    assert fnv1a64(b, seed=fnv1a64(a)) == fnv1a64(a + b)


def test_arrays_hash_their_bytes():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    assert fnv1a64(x) == fnv1a64(x.tobytes())
    assert fnv1a64(x.T) == fnv1a64(np.ascontiguousarray(x.T).tobytes())
