import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnialign.encoder import (
    EncodedFeatures, EncoderConfig, TransformerBlock, UniversalEncoder, average_video_frames,
)
from omnialign.errors import ConfigurationError, EmptyInputError, LengthError
from omnialign.modality import Modality
from omnialign.numerics import AdamW, Parameter, Tensor, gradcheck, ops
from omnialign.tokenizers import TokenSequence, VisualTokenizer


def features(x):
    return EncodedFeatures(Modality.VIDEO, Tensor(x))


def test_zeroed_block_is_identity(rng):
    block = TransformerBlock(8, 2, rng, np.float64)
    for lin in (block.qkv, block.proj, block.fc1, block.fc2):
        lin.weight.data[...] = 0
        lin.bias.data[...] = 0
    x = rng.standard_normal((5, 8))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


@pytest.mark.parametrize("length", [1, 3, 16])
def test_block_preserves_shape(rng, length):
    block = TransformerBlock(8, 2, rng, max_len=16)
    assert block(Tensor(rng.standard_normal((length, 8)).astype(np.float32))).shape == (length, 8)


def test_block_rejects_overlong_sequence(rng):
    with pytest.raises(LengthError):
        TransformerBlock(8, 2, rng, max_len=4)(Tensor(np.zeros((5, 8), np.float32)))


def test_width_must_divide_heads(rng):
    with pytest.raises(ConfigurationError):
        TransformerBlock(10, 4, rng)


def test_two_block_gradcheck(rng):
    blocks = [TransformerBlock(8, 2, rng, np.float64) for _ in range(2)]
    x = Parameter(rng.standard_normal((4, 8)))

    def f():
        h = x
        for b in blocks:
            h = b(h)
        return ops.sum(ops.gelu(h))

    params = [x] + [p for b in blocks for p in b.parameters()]
    assert gradcheck(f, params, max_coords=12) < 1e-5


@pytest.fixture
def encoder(rng):
    return UniversalEncoder(EncoderConfig(depth=2, width=8, heads=2, max_len=32), rng)


def test_encode_is_deterministic_and_length_covariant(encoder, rng):
    for length in (1, 7, 32):
        seq = TokenSequence(Modality.AUDIO, Tensor(rng.standard_normal((length, 8)).astype(np.float32)))
        a, b = encoder.encode(seq), encoder.encode(seq)
        assert a.features.shape == (length, 8)
        assert a.features.data.tobytes() == b.features.data.tobytes()


def test_encode_width_mismatch(encoder):
    with pytest.raises(ConfigurationError):
        encoder(Tensor(np.zeros((3, 6), np.float32)))


def test_frozen_encoder_passes_gradients_to_tokenizer(encoder, rng):
    tok = VisualTokenizer(8, 7, rng)
    before = {n: p.data.tobytes() for n, p in encoder.named_parameters()}
    opt = AdamW(list(encoder.named_parameters()) + list(tok.named_parameters()), lr=0.1)
    out = encoder(tok(rng.random((3, 14, 14))))
    loss = ops.sum(out * out)
    loss.backward()
    assert all(p.grad is None for p in encoder.parameters())
    assert np.abs(tok.weight.grad).sum() > 0
    opt.step()
    assert {n: p.data.tobytes() for n, p in encoder.named_parameters()} == before


def test_trainable_encoder_changes_after_step(rng):
    enc = UniversalEncoder(EncoderConfig(depth=1, width=8, heads=2, max_len=8, frozen=False), rng)
    before = enc.blocks[0].fc1.weight.data.copy()
    opt = AdamW(enc.named_parameters(), lr=0.1)
    out = enc(Tensor(rng.standard_normal((4, 8)).astype(np.float32)))
    ops.sum(out * out).backward()
    opt.step()
    assert not np.array_equal(before, enc.blocks[0].fc1.weight.data)


def test_average_identical_frames(rng):
    x = rng.standard_normal((4, 8)).astype(np.float32)
    out = average_video_frames([features(x)] * 5)
    np.testing.assert_allclose(out.features.data, x, atol=1e-6)


def test_average_two_frames(rng):
    a, b = rng.standard_normal((2, 3, 4))
    np.testing.assert_array_equal(average_video_frames([features(a), features(b)]).features.data, (a + b) / 2)


def test_average_matches_brute_force(rng):
    frames = rng.standard_normal((6, 3, 4)).astype(np.float32)
    out = average_video_frames([features(f) for f in frames]).features.data
    ref = np.zeros((3, 4))
    for i, j in itertools.product(range(3), range(4)):
        ref[i, j] = sum(float(f[i, j]) for f in frames) / 6
    np.testing.assert_allclose(out, ref, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_average_is_permutation_invariant(t, seed):
    r = np.random.default_rng(seed)
    frames = r.standard_normal((t, 3, 4)).astype(np.float32)
    a = average_video_frames([features(f) for f in frames]).features.data
    b = average_video_frames([features(f) for f in frames[r.permutation(t)]]).features.data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_average_errors(rng):
    with pytest.raises(EmptyInputError):
        average_video_frames([])
    with pytest.raises(ConfigurationError):
        average_video_frames([features(np.zeros((2, 4))), features(np.zeros((3, 4)))])
