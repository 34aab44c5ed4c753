"""The full stack: tokenizers -> frozen encoder -> projection experts -> adapter -> decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .decoder import PAD, CausalDecoder, DecoderConfig, alignment_layout, instruction_layout
from .encoder import EncoderConfig, UniversalEncoder
from .errors import ConfigurationError, EmptyInputError
from .modality import Modality
from .numerics import Linear, Module, Tensor, ops
from .tokenizers import ModalityTokenizers
from .upm import RouterType, UniversalProjection

# Parameter-name prefixes of the five top-level components.
COMPONENTS = ("tokenizers", "encoder", "upm", "adapter", "decoder")


@dataclass
class Prefix:
    """Adapted modality tokens ``[B, N, D_lm]`` and the routing weights ``[B, N, K]``."""

    embeddings: Tensor
    routing_weights: Tensor


def _streams(seed: int) -> dict[str, np.random.Generator]:
    # One independent stream per component: changing the expert count never
    # changes the encoder or decoder initialisation.
    children = np.random.SeedSequence(seed).spawn(len(COMPONENTS))
    return {name: np.random.default_rng(s) for name, s in zip(COMPONENTS, children)}


class OmniModel(Module):
    def __init__(self, cfg: ModelConfig, n_experts: int | None = None):
        dtype = np.dtype(cfg.dtype)
        rng = _streams(cfg.init_seed)
        self.tokenizers = ModalityTokenizers(cfg.width, cfg.tokenizer, rng["tokenizers"], dtype)
        self.encoder = UniversalEncoder(
            EncoderConfig(cfg.encoder_depth, cfg.width, cfg.encoder_heads, cfg.max_len, cfg.frozen_encoder),
            rng["encoder"], dtype)
        self.upm = UniversalProjection(
            cfg.width, cfg.num_modality_tokens, cfg.num_experts if n_experts is None else n_experts,
            cfg.expert_depth, cfg.expert_heads, rng["upm"], dtype, cfg.router_type)
        self.adapter = Linear(cfg.width, cfg.lm_width, rng["adapter"], dtype)
        self.decoder = CausalDecoder(DecoderConfig(cfg.lm_depth, cfg.lm_width, cfg.lm_heads, cfg.max_seq),
                                     rng["decoder"], dtype)
        self._cfg = cfg
        self.assign_names()

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self._cfg.dtype)

    @property
    def n_experts(self) -> int:
        return self.upm.n_experts

    def expand_experts(self, n_experts: int, init: str = "image", seed: int | None = None) -> None:
        """Replace the single stage-I expert by ``n_experts`` experts (copied or random)."""
        seed = self._cfg.init_seed if seed is None else seed
        rng = np.random.default_rng([seed, 0xE4, n_experts])
        frozen = self.upm.experts[0].parameters()[0].frozen
        self.upm = self.upm.expand(n_experts, init=init, rng=rng)
        if frozen:
            self.upm.freeze()
        self.assign_names()

    # -- forward pieces -------------------------------------------------------------

    def features(self, modality: Modality | str, payloads: Sequence[np.ndarray] | np.ndarray) -> Tensor:
        """Encoded features ``[B, L, D]`` for a batch of raw payloads of one modality.

        Video payloads may differ in frame count; their frames are encoded
        together and averaged token-wise per clip. Point payloads are either
        raw ``[P, 6]`` clouds or pre-grouped ``[G_n, G, 6]`` arrays.
        """
        modality = Modality.parse(modality)
        if len(payloads) == 0:
            raise EmptyInputError("empty batch")
        tok = self.tokenizers
        if modality is Modality.VIDEO:
            counts = [int(np.shape(p)[0]) for p in payloads]
            if min(counts) < 1:
                raise EmptyInputError("video has no frames")
            frames = np.concatenate([np.asarray(p, dtype=self.dtype) for p in payloads])
            enc = self.encoder(tok.image(frames))
            return ops.segment_mean(enc, counts)
        if modality is Modality.POINT:
            grouped = np.stack([p if np.ndim(p) == 3 else tok.point.group(p) for p in payloads])
            return self.encoder(tok.point.embed_groups(grouped))
        batch = np.stack([np.asarray(p, dtype=self.dtype) for p in payloads])
        return self.encoder(tok.for_modality(modality)(batch))

    def project(self, modality: Modality | str, feats: Tensor, router_type: RouterType | str | None = None):
        return self.upm(modality, feats, router_type)

    def prefix(self, modality: Modality | str, payloads, router_type: RouterType | str | None = None) -> Prefix:
        out = self.project(modality, self.features(modality, payloads), router_type)
        return Prefix(self.adapter(out.q_bar), out.routing_weights)

    # -- losses -----------------------------------------------------------------------

    def alignment_loss(self, modality: Modality | str, payloads, captions: Sequence[str],
                       router_type: RouterType | str | None = None) -> Tensor:
        """Mean caption cross-entropy for ``[q_bar | BOS caption EOS]`` sequences."""
        pre = self.prefix(modality, payloads, router_type)
        budget = self._cfg.max_seq - self._cfg.num_modality_tokens
        rows = [alignment_layout(c, budget)[:2] for c in captions]
        ids, mask = pad_batch(rows)
        return self.decoder.loss(pre.embeddings, ids, mask)

    def instruction_loss(self, modality: Modality | str, payloads, sys_prompt: str,
                         dialogs: Sequence[Sequence[tuple[str, str]]]) -> Tensor:
        pre = self.prefix(modality, payloads)
        ids, mask = pad_batch([instruction_layout(sys_prompt, turns) for turns in dialogs])
        if pre.embeddings.shape[-2] + ids.shape[-1] > self._cfg.max_seq:
            raise ConfigurationError(f"instruction sequences of length {ids.shape[-1]} do not fit max_seq")
        return self.decoder.loss(pre.embeddings, ids, mask)


def pad_batch(rows: Sequence[tuple[Sequence[int], Sequence[bool]]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad ``(ids, mask)`` rows with PAD (mask false)."""
    width = max(len(ids) for ids, _ in rows)
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, (r_ids, r_mask) in enumerate(rows):
        ids[i, : len(r_ids)] = r_ids
        mask[i, : len(r_mask)] = r_mask
    return ids, mask


def component_of(name: str) -> str:
    head = name.split(".", 1)[0]
    if head not in COMPONENTS:
        raise ValueError(f"parameter {name!r} belongs to no known component")
    return head
