"""In-memory paired datasets built from scene seeds or loaded from manifests."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..config import RunConfig, TokenizerConfig
from ..modality import ALL_MODALITIES, Modality
from ..tokenizers import group_points
from .manifest import DatasetManifest, ManifestItem, load_manifest, write_manifest
from .scenes import SceneSpec, generate_scene, render_modality
from .text import (
    QUESTIONS, caption_for_scene, caption_prompt, open_qa_prompt, option_qa_prompt, option_questions, qa_for_scene,
)

SPLITS = ("train", "eval")
# Seed-space partition: every (data seed, modality, split) owns a disjoint block.
_SPLIT_OFFSET = {"train": 0, "eval": 500_000}
_MODALITY_STRIDE = 1_000_000
_SEED_STRIDE = 10_000_000


def split_seeds(data_seed: int, modality: Modality | str, split: str, n: int) -> list[int]:
    if split not in _SPLIT_OFFSET:
        raise ValueError(f"unknown split {split!r}")
    if not 0 < n <= 500_000:
        raise ValueError(f"split size must be in [1, 500000], got {n}")
    base = data_seed * _SEED_STRIDE + Modality.parse(modality).tag * _MODALITY_STRIDE + _SPLIT_OFFSET[split]
    return list(range(base, base + n))


@dataclass
class ModalityDataset:
    """Scenes of one modality with their rendered payloads and gold captions.

    ``inputs`` are the model-ready payloads: identical to ``payloads`` except
    for point clouds, which are pre-grouped once.
    """

    modality: Modality
    specs: list[SceneSpec]
    payloads: list[np.ndarray]
    inputs: list[np.ndarray] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        self.modality = Modality.parse(self.modality)
        if not self.specs:
            raise ValueError("a dataset needs at least one scene")

    def __len__(self) -> int:
        return len(self.specs)

    @property
    def captions(self) -> list[str]:
        return [caption_for_scene(s) for s in self.specs]

    def subset(self, indices: Sequence[int]) -> "ModalityDataset":
        idx = list(indices)
        return ModalityDataset(self.modality, [self.specs[i] for i in idx], [self.payloads[i] for i in idx],
                               [self.inputs[i] for i in idx], self.split)

    def to_manifest(self) -> DatasetManifest:
        items = [ManifestItem(p, caption_for_scene(s), qa_for_scene(s),
                              {"shape": s.shape, "color": s.color, "size": s.size, "count": s.count, "seed": s.seed})
                 for s, p in zip(self.specs, self.payloads)]
        return DatasetManifest(self.modality, items, self.split)


def prepare_input(modality: Modality, payload: np.ndarray, cfg: TokenizerConfig) -> np.ndarray:
    if modality is Modality.POINT:
        return group_points(payload, cfg.point_samples, cfg.point_groups, cfg.point_group_size)
    return payload


def build_dataset(modality: Modality | str, seeds: Iterable[int], cfg: TokenizerConfig,
                  split: str = "train") -> ModalityDataset:
    modality = Modality.parse(modality)
    specs = [generate_scene(s) for s in seeds]
    payloads = [render_modality(s, modality, cfg).payload for s in specs]
    inputs = [prepare_input(modality, p, cfg) for p in payloads]
    return ModalityDataset(modality, specs, payloads, inputs, split)


def dataset_from_manifest(manifest: DatasetManifest, cfg: TokenizerConfig) -> ModalityDataset:
    specs = []
    for item in manifest.items:
        if item.scene is None:
            raise ValueError("manifest items carry no scene record")
        specs.append(SceneSpec(**item.scene))
    payloads = [item.payload for item in manifest.items]
    inputs = [prepare_input(manifest.modality, p, cfg) for p in payloads]
    return ModalityDataset(manifest.modality, specs, payloads, inputs, manifest.split)


def build_split(cfg: RunConfig, modality: Modality | str, split: str, size: int | None = None) -> ModalityDataset:
    if size is None:
        size = cfg.size_for(Modality.parse(modality).value) if split == "train" else cfg.data.eval_size
    seeds = split_seeds(cfg.data.seed, modality, split, size)
    return build_dataset(modality, seeds, cfg.model.tokenizer, split)


class DatasetCache:
    """Builds each (modality, split) dataset once, optionally from manifests in ``data_dir``."""

    def __init__(self, cfg: RunConfig, data_dir: str | Path | None = None):
        self.cfg = cfg
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self._cache: dict[tuple[str, str, int | None], ModalityDataset] = {}

    def get(self, modality: Modality | str, split: str = "train", size: int | None = None) -> ModalityDataset:
        modality = Modality.parse(modality)
        key = (modality.value, split, size)
        if key not in self._cache:
            path = None if self.data_dir is None else manifest_path(self.data_dir, modality, split)
            if path is not None and path.exists() and size is None:
                ds = dataset_from_manifest(load_manifest(path), self.cfg.model.tokenizer)
            else:
                ds = build_split(self.cfg, modality, split, size)
            self._cache[key] = ds
        return self._cache[key]

    def all(self, modalities: Iterable[Modality | str], split: str = "train") -> dict[Modality, ModalityDataset]:
        return {Modality.parse(m): self.get(m, split) for m in modalities}


def manifest_path(data_dir: str | Path, modality: Modality | str, split: str = "train") -> Path:
    return Path(data_dir) / f"{Modality.parse(modality).value}_{split}.olmf"


def generate_manifests(cfg: RunConfig, out_dir: str | Path, splits: Sequence[str] = ("train",),
                       modalities: Sequence[Modality] = ALL_MODALITIES) -> list[Path]:
    """Write one manifest per modality (and split); byte-identical for a fixed seed."""
    paths = []
    for split in splits:
        for m in modalities:
            ds = build_split(cfg, m, split)
            path = manifest_path(out_dir, m, split)
            write_manifest(ds.to_manifest(), path)
            paths.append(path)
    return paths


# -- instruction examples ------------------------------------------------------------

INSTRUCTION_KINDS = ("caption", "open_qa", "option_qa")


def instruction_turn(spec: SceneSpec, modality: Modality, kind: str, which: int = 0) -> tuple[str, str]:
    """One (instruction, answer) turn of the given kind; ``which`` picks the question."""
    if kind == "caption":
        return caption_prompt(modality), caption_for_scene(spec)
    if kind == "open_qa":
        q, a = qa_for_scene(spec)[which % len(QUESTIONS)]
        return open_qa_prompt(q), a
    if kind == "option_qa":
        oq = option_questions(spec)[which % len(QUESTIONS)]
        return option_qa_prompt(oq), oq.answer_letter
    raise ValueError(f"unknown instruction kind {kind!r}")


def sample_dialog(spec: SceneSpec, modality: Modality, rng: np.random.Generator) -> list[tuple[str, str]]:
    kind = INSTRUCTION_KINDS[int(rng.integers(len(INSTRUCTION_KINDS)))]
    return [instruction_turn(spec, modality, kind, int(rng.integers(len(QUESTIONS))))]
