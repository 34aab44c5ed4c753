"""Transformer blocks and the shared, frozen universal encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, EmptyInputError, LengthError
from .modality import Modality
from .numerics import LayerNorm, Linear, Module, Parameter, Tensor, ops
from .numerics.nn import init_normal
from .tokenizers import TokenSequence


class TransformerBlock(Module):
    """Pre-norm block: ``x + Attn(LN(x))`` then ``+ MLP(LN(.))`` with a 4x GELU MLP."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 causal: bool = False, max_len: int | None = None):
        if width % heads:
            raise ConfigurationError(f"width {width} is not divisible by {heads} heads")
        self.ln1 = LayerNorm(width, dtype)
        self.qkv = Linear(width, 3 * width, rng, dtype)
        self.proj = Linear(width, width, rng, dtype)
        self.ln2 = LayerNorm(width, dtype)
        self.fc1 = Linear(width, 4 * width, rng, dtype)
        self.fc2 = Linear(4 * width, width, rng, dtype)
        self._heads = heads
        self._causal = causal
        self._max_len = max_len

    def forward(self, x: Tensor) -> Tensor:
        if self._max_len is not None and x.shape[-2] > self._max_len:
            raise LengthError(f"sequence length {x.shape[-2]} exceeds max_len {self._max_len}")
        a = ops.multi_head_attention(self.qkv(self.ln1(x)), self._heads, self._causal)
        x = x + self.proj(a)
        h = self.fc2(ops.gelu(self.fc1(self.ln2(x))))
        return x + h


@dataclass
class EncoderConfig:
    depth: int
    width: int
    heads: int
    max_len: int
    frozen: bool = True


@dataclass
class EncodedFeatures:
    modality: Modality
    features: Tensor


class UniversalEncoder(Module):
    """ViT-style stack applied identically to every modality's tokens.

    A single learned 1-D positional table is truncated to each sequence's
    length. With ``frozen`` the parameters never receive gradients, but
    gradients still flow through to upstream tokenizers.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.pos = Parameter(init_normal(rng, (cfg.max_len, cfg.width), 0.02, dtype))
        self.blocks = [TransformerBlock(cfg.width, cfg.heads, rng, dtype, max_len=cfg.max_len)
                       for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.width, dtype)
        self._cfg = cfg
        if cfg.frozen:
            self.freeze()

    @property
    def config(self) -> EncoderConfig:
        return self._cfg

    def forward(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self._cfg.width:
            raise ConfigurationError(f"token width {tokens.shape[-1]} != encoder width {self._cfg.width}")
        length = tokens.shape[-2]
        if length > self._cfg.max_len:
            raise LengthError(f"sequence length {length} exceeds max_len {self._cfg.max_len}")
        x = tokens + ops.getitem(self.pos, slice(0, length))
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def encode(self, seq: TokenSequence) -> EncodedFeatures:
        return EncodedFeatures(seq.modality, self.forward(seq.tokens))


def _pairwise_sum(items: Sequence[Tensor]) -> Tensor:
    if len(items) == 1:
        return items[0]
    mid = len(items) // 2
    return _pairwise_sum(items[:mid]) + _pairwise_sum(items[mid:])


def average_video_frames(frames: Sequence[EncodedFeatures]) -> EncodedFeatures:
    """Token-wise mean over frames (pairwise summation)."""
    if not frames:
        raise EmptyInputError("average_video_frames needs at least one frame")
    shapes = {f.features.shape for f in frames}
    if len(shapes) != 1:
        raise ConfigurationError(f"frames differ in shape: {sorted(shapes)}")
    total = _pairwise_sum([f.features for f in frames])
    return EncodedFeatures(frames[0].modality, total * (1.0 / len(frames)))
