"""Replay-aware batch sampling over per-modality datasets."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..data.datasets import ModalityDataset
from ..errors import ConfigurationError
from ..modality import Modality
from .plans import StagePlan

REPLAY_MODES = ("uniform", "old_new")


@dataclass
class Batch:
    """Examples of one step grouped by modality, in the plan's modality order."""

    step: int
    groups: dict[Modality, list[int]]

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.groups.values())

    def counts(self) -> dict[str, int]:
        return {m.value: len(v) for m, v in self.groups.items()}


class StageSampler:
    """Draws each example's modality, then an example uniformly from that modality.

    ``uniform``: every active modality is equally likely. ``old_new``: half the
    draws go to replayed modalities and half to new ones, uniform within each
    half. Batches depend only on ``(seed, step)``, so a resumed run sees the
    same data.
    """

    def __init__(self, plan: StagePlan, datasets: Mapping[Modality, ModalityDataset], seed: int,
                 mode: str = "uniform", stream: int = 0):
        if mode not in REPLAY_MODES:
            raise ConfigurationError(f"replay mode must be one of {REPLAY_MODES}, got {mode!r}")
        missing = [m.value for m in plan.modalities if m not in datasets]
        if missing:
            raise ConfigurationError(f"stage {plan.stage} has no dataset for {missing}")
        if not plan.modalities:
            raise ConfigurationError(f"stage {plan.stage} has no active modalities")
        self.plan = plan
        self.modalities = list(plan.modalities)
        self.sizes = {m: len(datasets[m]) for m in self.modalities}
        self.seed = int(seed)
        self.mode = mode
        self.stream = int(stream)
        self.probs = self._probabilities()

    def _probabilities(self) -> np.ndarray:
        n = len(self.modalities)
        if self.mode == "uniform" or not self.plan.replay_modalities or not self.plan.new_modalities:
            return np.full(n, 1.0 / n)
        old = set(self.plan.replay_modalities)
        n_old = sum(m in old for m in self.modalities)
        n_new = n - n_old
        return np.array([0.5 / n_old if m in old else 0.5 / n_new for m in self.modalities])

    def rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.stream, int(step)])

    def draw_modalities(self, n: int, rng: np.random.Generator) -> list[Modality]:
        picks = rng.choice(len(self.modalities), size=n, p=self.probs)
        return [self.modalities[i] for i in picks]

    def batch(self, step: int, batch_size: int | None = None) -> Batch:
        rng = self.rng(step)
        n = self.plan.batch_size if batch_size is None else batch_size
        chosen = self.draw_modalities(n, rng)
        groups: dict[Modality, list[int]] = {}
        for m in self.modalities:
            k = sum(c is m for c in chosen)
            if k:
                groups[m] = [int(i) for i in rng.integers(self.sizes[m], size=k)]
        return Batch(step, groups)

    def frequencies(self, draws: int, seed_step: int = 0) -> dict[str, float]:
        counts = Counter(self.draw_modalities(draws, self.rng(seed_step)))
        return {m.value: counts[m] / draws for m in self.modalities}


def build_stage_sampler(plan: StagePlan, datasets: Mapping[Modality, ModalityDataset], seed: int,
                        mode: str = "uniform", stream: int = 0) -> StageSampler:
    return StageSampler(plan, datasets, seed, mode, stream)
