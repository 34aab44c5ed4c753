"""Universal projection: K transformer experts mixed by per-modality routers.

For modality ``m`` the joint sequence ``[q_m, x_m]`` (modality tokens first)
is fed through every expert. A per-modality router turns the modality-token
rows of the joint sequence into routing weights ``w_m`` of shape ``[N, K]``,
and only the first ``N`` output rows are mixed and returned.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .encoder import EncodedFeatures, TransformerBlock
from .errors import ConfigurationError
from .modality import ALL_MODALITIES, Modality
from .numerics import MLP, LayerNorm, Module, Parameter, Tensor, ops
from .numerics.nn import init_normal


class RouterType(str, Enum):
    SOFT = "soft"
    SPARSE = "sparse"
    CONSTANT = "constant"

    @classmethod
    def parse(cls, value: "str | RouterType") -> "RouterType":
        return value if isinstance(value, RouterType) else cls(str(value).lower())


@dataclass
class UPMOutput:
    q_bar: Tensor
    routing_weights: Tensor


class ProjectionExpert(Module):
    """A stack of bidirectional transformer blocks with a final LayerNorm."""

    def __init__(self, width: int, depth: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        self.blocks = [TransformerBlock(width, heads, rng, dtype) for _ in range(depth)]
        self.norm = LayerNorm(width, dtype)

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


class ModalityRouter(Module):
    """Per-token MLP ``D -> D -> K`` producing routing logits."""

    def __init__(self, width: int, n_experts: int, rng: np.random.Generator, dtype=np.float32):
        self.mlp = MLP(width, width, n_experts, rng, dtype)

    def forward(self, rows: Tensor) -> Tensor:
        return self.mlp(rows)


def combine_experts(outputs: Sequence[Tensor], weights: Tensor, router_type: RouterType | str) -> tuple[Tensor, Tensor]:
    """Mix ``K`` expert outputs ``[..., N, D]`` with ``weights`` ``[..., N, K]``.

    Returns ``(mixed, effective_weights)``. Soft mixes with ``weights``;
    Constant uses ``1/K`` and ignores ``weights``; Sparse keeps only the
    arg-max expert per token (lowest index on ties), scaled by its weight.
    """
    router_type = RouterType.parse(router_type)
    k = len(outputs)
    if weights.shape[-1] != k:
        raise ConfigurationError(f"{k} expert outputs but routing weights of shape {weights.shape}")
    if router_type is RouterType.SOFT:
        eff = weights
    elif router_type is RouterType.CONSTANT:
        eff = Tensor(np.full(weights.shape, 1.0 / k, dtype=weights.dtype))
    else:
        winner = np.argmax(weights.data, axis=-1)
        onehot = (np.arange(k) == winner[..., None]).astype(weights.dtype)
        eff = weights * onehot
    return ops.weighted_sum(outputs, eff), eff


class UniversalProjection(Module):
    def __init__(self, width: int, n_tokens: int, n_experts: int, depth: int, heads: int,
                 rng: np.random.Generator, dtype=np.float32, router_type: RouterType | str = RouterType.SOFT,
                 modalities: Iterable[Modality] = ALL_MODALITIES):
        self.modality_tokens = {
            m.value: Parameter(init_normal(rng, (n_tokens, width), 0.02, dtype)) for m in modalities
        }
        self.routers = {m.value: ModalityRouter(width, n_experts, rng, dtype) for m in modalities}
        self.experts = [ProjectionExpert(width, depth, heads, rng, dtype) for _ in range(n_experts)]
        self._width = width
        self._n_tokens = n_tokens
        self._depth = depth
        self._heads = heads
        self._dtype = np.dtype(dtype)
        self.router_type = RouterType.parse(router_type)

    @property
    def n_tokens(self) -> int:
        return self._n_tokens

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def width(self) -> int:
        return self._width

    def joint(self, modality: Modality | str, x: Tensor) -> Tensor:
        """Concatenate ``q_m`` in front of ``x`` (broadcast over batch axes)."""
        key = Modality.parse(modality).value
        if key not in self.modality_tokens:
            raise ConfigurationError(f"no modality tokens registered for {key!r}")
        if x.shape[-1] != self._width:
            raise ConfigurationError(f"feature width {x.shape[-1]} != projection width {self._width}")
        q = ops.expand_leading(self.modality_tokens[key], x.shape[:-2])
        return ops.concat([q, x], axis=-2)

    def route(self, modality: Modality | str, joint: Tensor) -> Tensor:
        """Softmax routing weights ``[..., N, K]`` for the modality-token rows of ``joint``."""
        key = Modality.parse(modality).value
        if key not in self.routers:
            raise ConfigurationError(f"no router registered for modality {key!r}")
        # The router is per-token, so evaluating it on the kept rows only is exact.
        rows = ops.getitem(joint, (..., slice(0, self._n_tokens), slice(None)))
        return ops.softmax(self.routers[key](rows), axis=-1)

    def forward(self, modality: Modality | str, x: Tensor | EncodedFeatures,
                router_type: RouterType | str | None = None) -> UPMOutput:
        feats = x.features if isinstance(x, EncodedFeatures) else x
        rtype = self.router_type if router_type is None else RouterType.parse(router_type)
        joint = self.joint(modality, feats)
        n = self._n_tokens
        keep = (..., slice(0, n), slice(None))
        outputs = [ops.getitem(expert(joint), keep) for expert in self.experts]
        if rtype is RouterType.CONSTANT:
            weights = Tensor(np.full(outputs[0].shape[:-1] + (len(outputs),), 1.0 / len(outputs),
                                     dtype=feats.dtype))
        else:
            weights = self.route(modality, joint)
        q_bar, eff = combine_experts(outputs, weights, rtype)
        return UPMOutput(q_bar, eff)

    def expand(self, n_experts: int, init: str = "image", rng: np.random.Generator | None = None,
               keep_modality_tokens: Iterable[Modality | str] = (Modality.IMAGE,)) -> "UniversalProjection":
        """Build a ``n_experts`` projection from this (single-expert) image projection.

        ``init="image"`` deep-copies expert 0; ``init="random"`` draws fresh
        experts. Routers are always re-initialised; modality tokens listed in
        ``keep_modality_tokens`` are carried over, the rest are re-drawn.
        """
        if rng is None:
            rng = np.random.default_rng(0)
        if init == "image":
            experts = init_experts_from_image(self.experts[0], n_experts)
        elif init == "random":
            experts = [ProjectionExpert(self._width, self._depth, self._heads, rng, self._dtype)
                       for _ in range(n_experts)]
        else:
            raise ValueError(f"unknown expert init {init!r}")
        new = UniversalProjection.__new__(UniversalProjection)
        keep = {Modality.parse(m).value for m in keep_modality_tokens}
        new.modality_tokens = {}
        for key, tok in self.modality_tokens.items():
            if key in keep:
                new.modality_tokens[key] = copy.deepcopy(tok)
            else:
                new.modality_tokens[key] = Parameter(init_normal(rng, tok.shape, 0.02, self._dtype))
        new.routers = {key: ModalityRouter(self._width, n_experts, rng, self._dtype) for key in self.routers}
        new.experts = experts
        new._width, new._n_tokens, new._depth, new._heads = self._width, self._n_tokens, self._depth, self._heads
        new._dtype = self._dtype
        new.router_type = self.router_type
        return new


def init_experts_from_image(p_image: ProjectionExpert, k: int) -> list[ProjectionExpert]:
    """``k`` independent deep copies of the trained image projection expert."""
    if k < 1:
        raise ValueError(f"need at least one expert, got {k}")
    experts = [copy.deepcopy(p_image) for _ in range(k)]
    for e in experts:
        for p in e.parameters():
            p.grad = None
    return experts
