"""Which parameters train in which phase, and a ledger that catches violations."""

from __future__ import annotations

import numpy as np

from ..hashing import fnv1a64
from ..numerics import Module

# Phase -> trainable top-level components.
FREEZE_POLICIES = {
    "lm_pretrain": ("decoder",),
    "alignment": ("tokenizers", "upm", "adapter"),
    "instruction": ("decoder",),
}


def trainable_prefixes(phase: str, train_encoder: bool = False) -> tuple[str, ...]:
    if phase not in FREEZE_POLICIES:
        raise ValueError(f"unknown phase {phase!r}; expected one of {sorted(FREEZE_POLICIES)}")
    prefixes = FREEZE_POLICIES[phase]
    if phase == "alignment" and train_encoder:
        prefixes = prefixes + ("encoder",)
    return prefixes


def is_trainable(name: str, prefixes: tuple[str, ...]) -> bool:
    return any(name == p or name.startswith(p + ".") for p in prefixes)


def apply_freeze_policy(phase: str, model: Module, train_encoder: bool = False) -> int:
    """Set frozen flags for ``phase``; returns the number of trainable scalars."""
    prefixes = trainable_prefixes(phase, train_encoder)
    count = 0
    for name, p in model.named_parameters():
        p.frozen = not is_trainable(name, prefixes)
        if not p.frozen:
            count += p.size
    return count


def parameter_hash(arr: np.ndarray) -> int:
    return fnv1a64(np.ascontiguousarray(arr))


def component_hashes(model: Module) -> dict[str, str]:
    """One digest per top-level component over all of its parameter bytes."""
    digests: dict[str, int] = {}
    for name, p in model.named_parameters():
        head = name.split(".", 1)[0]
        digests[head] = fnv1a64(np.ascontiguousarray(p.data), digests.get(head))
    return {k: f"{v:016x}" for k, v in digests.items()}


class FreezeViolation(RuntimeError):
    pass


class FreezeLedger:
    """Hashes a random sample of frozen tensors and re-checks them on demand."""

    def __init__(self, model: Module, sample: int = 16, seed: int = 0):
        frozen = [(n, p) for n, p in model.named_parameters() if p.frozen]
        rng = np.random.default_rng([seed, 0xF0])
        if len(frozen) > sample:
            pick = sorted(rng.choice(len(frozen), size=sample, replace=False))
            frozen = [frozen[i] for i in pick]
        self._tracked = [(n, p, parameter_hash(p.data)) for n, p in frozen]

    @property
    def names(self) -> list[str]:
        return [n for n, _, _ in self._tracked]

    def check(self, step: int | None = None) -> None:
        for name, p, digest in self._tracked:
            if parameter_hash(p.data) != digest:
                where = "" if step is None else f" at step {step}"
                raise FreezeViolation(f"frozen parameter {name!r} changed{where}")
