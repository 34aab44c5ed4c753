"""Byte-level causal language model and the input-sequence layouts fed to it.

Sequences are ``[prefix embeddings ; text token embeddings]``. The prefix holds
projected modality tokens (already mapped to the decoder width); text is
byte tokens plus BOS/EOS/PAD specials.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import TransformerBlock
from .errors import ConfigurationError, LengthError
from .modality import Modality
from .numerics import LayerNorm, Linear, Module, Parameter, Tensor, no_grad, ops
from .numerics.nn import init_normal

log = logging.getLogger(__name__)

BOS, EOS, PAD = 256, 257, 258
VOCAB_SIZE = 259


def encode_text(text: str | bytes) -> list[int]:
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return list(data)


def decode_tokens(ids: Sequence[int]) -> bytes:
    """Byte tokens back to bytes; specials are dropped."""
    return bytes(int(i) for i in ids if 0 <= int(i) < 256)


def decode_text(ids: Sequence[int]) -> str:
    return decode_tokens(ids).decode("utf-8", errors="replace")


@dataclass
class AssembledSequence:
    """Prefix embeddings plus the text portion and its loss mask.

    ``prefix`` is ``[M, D_lm]`` (or ``None`` for text-only sequences);
    ``loss_mask[j]`` marks text positions whose token is a training target.
    """

    prefix: Tensor | None
    token_ids: np.ndarray
    loss_mask: np.ndarray
    modality_order: list[Modality] = field(default_factory=list)
    truncated: bool = False

    @property
    def prefix_len(self) -> int:
        return 0 if self.prefix is None else self.prefix.shape[-2]

    @property
    def text_len(self) -> int:
        return len(self.token_ids)

    def __len__(self) -> int:
        return self.prefix_len + self.text_len


# -- text layouts ---------------------------------------------------------------


def alignment_layout(caption: str, budget: int | None = None) -> tuple[list[int], list[bool], bool]:
    """``BOS caption EOS`` with loss on the caption and EOS.

    ``budget`` caps the text length; longer captions are cut (EOS kept).
    """
    if not caption:
        raise ValueError("caption must be non-empty")
    body = encode_text(caption)
    truncated = False
    if budget is not None and len(body) + 2 > budget:
        if budget < 3:
            raise LengthError(f"no room for a caption in {budget} text positions")
        body = body[: budget - 2]
        truncated = True
    ids = [BOS] + body + [EOS]
    mask = [False] + [True] * (len(body) + 1)
    return ids, mask, truncated


def instruction_prompt(sys_prompt: str, turns: Sequence[tuple[str, str]], upto: int | None = None) -> str:
    """Text preceding the answer of turn ``upto`` (all turns when ``None``)."""
    parts = [sys_prompt + "\n"] if sys_prompt else []
    n = len(turns) if upto is None else upto
    for t in range(n):
        ins, ans = turns[t]
        parts.append(("\n" if t else "") + f"Q: {ins}\nA: {ans}")
    if upto is not None:
        ins, _ = turns[upto]
        parts.append(("\n" if upto else "") + f"Q: {ins}\nA: ")
    return "".join(parts)


def instruction_layout(sys_prompt: str, turns: Sequence[tuple[str, str]]) -> tuple[list[int], list[bool]]:
    """``Sys Ins_1 Ans_1 ... Ins_T Ans_T EOS``; loss on answers and the final EOS.

    A non-final answer is followed by a newline that closes the turn and is
    trained as part of that answer.
    """
    if not turns:
        raise ValueError("instruction sequence needs at least one (instruction, answer) turn")
    ids: list[int] = []
    mask: list[bool] = []

    def put(text: str, target: bool) -> None:
        toks = encode_text(text)
        ids.extend(toks)
        mask.extend([target] * len(toks))

    if sys_prompt:
        put(sys_prompt + "\n", False)
    for t, (ins, ans) in enumerate(turns):
        put(f"Q: {ins}\nA: ", False)
        put(ans, True)
        if t + 1 < len(turns):
            put("\n", True)
    ids.append(EOS)
    mask.append(True)
    return ids, mask


def _stack_prefix(blocks: Sequence[Tensor]) -> Tensor | None:
    if not blocks:
        return None
    return blocks[0] if len(blocks) == 1 else ops.concat(list(blocks), axis=-2)


def assemble_alignment_sequence(prefix: Tensor, caption: str, max_seq: int,
                                modality: Modality | str | None = None) -> AssembledSequence:
    """``[q_bar | BOS caption EOS]`` without a system prompt."""
    budget = max_seq - prefix.shape[-2]
    ids, mask, truncated = alignment_layout(caption, budget)
    if truncated:
        log.warning("caption truncated to fit max_seq=%d", max_seq)
    order = [Modality.parse(modality)] if modality is not None else []
    return AssembledSequence(prefix, np.asarray(ids, dtype=np.int64), np.asarray(mask), order, truncated)


def assemble_instruction_sequence(prefixes: Sequence[Tensor], sys_prompt: str,
                                  turns: Sequence[tuple[str, str]], max_seq: int | None = None,
                                  modalities: Sequence[Modality | str] = ()) -> AssembledSequence:
    """All modality blocks (in the given order) precede ``Sys`` and the turns."""
    if not prefixes:
        raise ValueError("instruction sequence needs at least one modality prefix")
    ids, mask = instruction_layout(sys_prompt, turns)
    prefix = _stack_prefix(prefixes)
    if max_seq is not None and prefix.shape[-2] + len(ids) > max_seq:
        raise LengthError(f"instruction sequence of length {prefix.shape[-2] + len(ids)} exceeds {max_seq}")
    order = [Modality.parse(m) for m in modalities]
    return AssembledSequence(prefix, np.asarray(ids, dtype=np.int64), np.asarray(mask), order)


# -- the model -------------------------------------------------------------------


@dataclass
class DecoderConfig:
    depth: int
    width: int
    heads: int
    max_seq: int
    vocab_size: int = VOCAB_SIZE


class CausalDecoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.tok_emb = Parameter(init_normal(rng, (cfg.vocab_size, cfg.width), 0.5, dtype))
        self.pos = Parameter(init_normal(rng, (cfg.max_seq, cfg.width), 0.02, dtype))
        self.blocks = [TransformerBlock(cfg.width, cfg.heads, rng, dtype, causal=True) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.width, dtype)
        self.head = Linear(cfg.width, cfg.vocab_size, rng, dtype, bias=False, std=0.02)
        self._cfg = cfg

    @property
    def config(self) -> DecoderConfig:
        return self._cfg

    def hidden(self, prefix: Tensor | None, ids: np.ndarray) -> Tensor:
        """Final normalised hidden states for ``[prefix ; embed(ids)]``."""
        ids = np.asarray(ids, dtype=np.int64)
        x = ops.embedding(self.tok_emb, ids)
        if prefix is not None:
            if prefix.shape[-1] != self._cfg.width:
                raise ConfigurationError(f"prefix width {prefix.shape[-1]} != decoder width {self._cfg.width}")
            x = ops.concat([prefix, x], axis=-2)
        length = x.shape[-2]
        if length > self._cfg.max_seq:
            raise LengthError(f"sequence length {length} exceeds max_seq {self._cfg.max_seq}")
        x = x + ops.getitem(self.pos, slice(0, length))
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def logits(self, prefix: Tensor | None, ids: np.ndarray) -> Tensor:
        return self.head(self.hidden(prefix, ids))

    def loss(self, prefix: Tensor | None, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """Mean next-token cross-entropy on masked text positions.

        Works for a single sequence (``ids`` ``[T]``) or a batch (``[B, T]``
        with a ``[B, M, D]`` prefix).
        """
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        m = 0 if prefix is None else prefix.shape[-2]
        if m == 0 and mask[..., 0].any():
            raise ValueError("the first text token cannot be a target without a prefix")
        if not mask.any():
            raise ValueError("loss mask selects no positions")
        h = self.hidden(prefix, ids)
        t = ids.shape[-1]
        if m == 0:
            sel = ops.getitem(h, (..., slice(0, t - 1), slice(None)))
            logits = self.head(sel)
            return ops.cross_entropy(logits, ids[..., 1:], mask[..., 1:])
        sel = ops.getitem(h, (..., slice(m - 1, m + t - 1), slice(None)))
        return ops.cross_entropy(self.head(sel), ids, mask)


def lm_loss(decoder: CausalDecoder, seq: AssembledSequence) -> Tensor:
    if not np.asarray(seq.loss_mask).any():
        raise ValueError("loss mask selects no positions")
    return decoder.loss(seq.prefix, seq.token_ids, seq.loss_mask)


def generate_greedy(decoder: CausalDecoder, prefix: Tensor | None, prompt_ids: Sequence[int] | np.ndarray,
                    max_new: int, stop: Sequence[int] = (EOS,)) -> list[list[int]]:
    """Greedy decoding; returns the newly generated ids, including a final stop token.

    ``prefix`` may be ``[M, D]`` with ``prompt_ids`` ``[T]`` (one sequence) or
    ``[B, M, D]`` with ``[B, T]`` (a batch sharing one prompt length).
    """
    if max_new < 1:
        raise ValueError("max_new must be at least 1")
    ids = np.asarray(prompt_ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
        prefix = None if prefix is None else ops.reshape(prefix, (1,) + prefix.shape)
    b = ids.shape[0]
    m = 0 if prefix is None else prefix.shape[-2]
    out: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    stop = set(stop)
    with no_grad():
        for _ in range(max_new):
            if m + ids.shape[1] > decoder.config.max_seq:
                break
            h = decoder.hidden(prefix, ids)
            last = ops.getitem(h, (slice(None), -1, slice(None)))
            nxt = np.argmax(decoder.head(last).data, axis=-1)
            for i in range(b):
                if done[i]:
                    continue
                out[i].append(int(nxt[i]))
                if int(nxt[i]) in stop:
                    done[i] = True
            if done.all():
                break
            ids = np.concatenate([ids, nxt[:, None]], axis=1)
    return out
