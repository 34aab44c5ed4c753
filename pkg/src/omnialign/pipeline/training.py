"""Training loops: decoder text pretraining, alignment stages and instruction tuning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..checkpoint import TrainState, save_checkpoint
from ..config import RunConfig, StageConfig
from ..data.datasets import ModalityDataset, sample_dialog
from ..data.scenes import GRID_SIZE, SceneSpec
from ..data.text import caption_for_scene
from ..decoder import BOS, EOS, encode_text
from ..errors import NonFiniteError, NumericalAbort
from ..modality import Modality
from ..model import OmniModel, pad_batch
from ..numerics import AdamW, Tensor, clip_grad_norm, no_grad, warmup_cosine_lr
from .freeze import FreezeLedger, apply_freeze_policy
from .plans import StagePlan
from .sampler import Batch, StageSampler

log = logging.getLogger(__name__)

# Distinct sampler streams keep phases from reusing each other's batches.
_STREAMS = {"lm_pretrain": 1, "I": 2, "II": 3, "III": 4, "instruct": 5}

Term = tuple[str, Tensor, float]  # (label, loss, weight)


class MetricsWriter:
    """Line-delimited JSON metric records, also kept in memory."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class PhaseResult:
    state: TrainState
    losses: list[float]
    checkpoint: Path | None = None
    trainable: int = 0
    routing: dict[str, list[float]] = field(default_factory=dict)

    def modality_curve(self, modality: str) -> list[float]:
        return self.state.losses.get(modality, [])


def _snapshot_abort(model, state: TrainState, run_dir: Path | None, phase: str, step: int, reason: str):
    snap = None
    if run_dir is not None:
        snap = run_dir / f"nan_snapshot_{phase}_{step}.olmc"
        state.step = step
        save_checkpoint(model, state, snap)
    raise NumericalAbort(f"{phase}: non-finite loss at step {step} ({reason})",
                         None if snap is None else str(snap))


def run_phase(model: OmniModel, *, phase: str, stage: str, stage_cfg: StageConfig, seed: int,
              terms: Callable[[int], Sequence[Term]], state: TrainState | None = None,
              optimizer: AdamW | None = None, total_steps: int | None = None, stop_at: int | None = None,
              run_dir: str | Path | None = None, metrics: MetricsWriter | None = None, log_every: int = 50,
              ledger_every: int = 100, train_encoder: bool = False, config_hash: str = "",
              save: bool = True, routing_probe: Callable[[], dict] | None = None) -> PhaseResult:
    """Generic AdamW loop over ``terms(step)`` with accumulation, clipping and freeze checks.

    ``state``/``optimizer`` resume a run; ``stop_at`` ends early (for resume
    tests) while keeping the schedule of ``total_steps``.
    """
    total = stage_cfg.steps if total_steps is None else total_steps
    stop = total if stop_at is None else min(stop_at, total)
    run_dir = Path(run_dir) if run_dir is not None else None
    trainable = apply_freeze_policy(phase, model, train_encoder)
    if optimizer is None:
        optimizer = AdamW(model.named_parameters(), lr=stage_cfg.lr, weight_decay=stage_cfg.weight_decay)
    if state is None:
        state = TrainState(phase=stage, step=0, seed=seed, config_hash=config_hash)
    ledger = FreezeLedger(model, seed=seed)
    trained = [p for p in model.parameters() if not p.frozen]
    losses: list[float] = []
    step = state.step
    while step < stop:
        lr = warmup_cosine_lr(step + 1, stage_cfg.lr, stage_cfg.warmup, total)
        optimizer.zero_grad()
        step_loss = 0.0
        per_mod: dict[str, float] = {}
        for micro in range(stage_cfg.accum_steps):
            try:
                parts = terms(step * stage_cfg.accum_steps + micro)
                total_loss = None
                for label, loss, weight in parts:
                    value = loss.item()
                    if not math.isfinite(value):
                        raise NonFiniteError(f"loss[{label}]")
                    per_mod[label] = per_mod.get(label, 0.0) + value / stage_cfg.accum_steps
                    scaled = loss * (weight / stage_cfg.accum_steps)
                    total_loss = scaled if total_loss is None else total_loss + scaled
                step_loss += total_loss.item()
                total_loss.backward()
            except NonFiniteError as exc:
                _snapshot_abort(model, state, run_dir, stage, step, str(exc))
        if stage_cfg.grad_clip > 0:
            clip_grad_norm(trained, stage_cfg.grad_clip)
        optimizer.step(lr)
        step += 1
        state.step = step
        losses.append(step_loss)
        for label, value in per_mod.items():
            state.losses.setdefault(label, []).append(value)
        if ledger_every and step % ledger_every == 0:
            ledger.check(step)
        if metrics is not None and (step % log_every == 0 or step == stop):
            record = {"phase": stage, "step": step, "loss": step_loss, "lr": lr,
                      "modality_loss": per_mod}
            if routing_probe is not None:
                record["routing"] = routing_probe()
            metrics.write(record)
            log.info("%s step %d loss %.4f lr %.2e", stage, step, step_loss, lr)
    ledger.check(step)
    state.optimizer_t = optimizer.t
    ckpt = None
    if save and run_dir is not None:
        ckpt = save_checkpoint(model, state, run_dir / f"ckpt_{step}.olmc", optimizer)
    return PhaseResult(state, losses, ckpt, trainable)


# -- batch builders -------------------------------------------------------------------


def scene_code(spec: SceneSpec, length: int) -> list[int]:
    """A short byte code naming the scene attributes, cycled to ``length`` bytes."""
    code = (spec.size[0] + spec.color[0] + {"square": "q", "circle": "c", "triangle": "t"}[spec.shape]
            + str(spec.count))
    return encode_text((code * (length // len(code) + 1))[:length])


def lm_pretrain_terms(model: OmniModel, batch_size: int, seed: int) -> Callable[[int], list[Term]]:
    """Text-only batches ``[code | BOS caption EOS]`` that teach the decoder the caption language.

    The code bytes sit where modality tokens later go, so the frozen decoder
    already knows how to read a short conditioning prefix.
    """
    n = model.config.num_modality_tokens

    def terms(step: int) -> list[Term]:
        rng = np.random.default_rng([seed, _STREAMS["lm_pretrain"], step])
        rows = []
        for idx in rng.integers(GRID_SIZE, size=batch_size):
            spec = SceneSpec.from_index(int(idx))
            cap = encode_text(caption_for_scene(spec))
            code = scene_code(spec, n)
            rows.append((code + [BOS] + cap + [EOS], [False] * (n + 1) + [True] * (len(cap) + 1)))
        ids, mask = pad_batch(rows)
        return [("text", model.decoder.loss(None, ids, mask), 1.0)]

    return terms


def alignment_terms(model: OmniModel, sampler: StageSampler, datasets: Mapping[Modality, ModalityDataset],
                    router_type: str | None = None) -> Callable[[int], list[Term]]:
    def terms(step: int) -> list[Term]:
        batch = sampler.batch(step)
        out = []
        for m, idx in batch.groups.items():
            ds = datasets[m]
            loss = model.alignment_loss(m, [ds.inputs[i] for i in idx], [caption_for_scene(ds.specs[i]) for i in idx],
                                        router_type)
            out.append((m.value, loss, len(idx) / batch.size))
        return out

    return terms


def instruction_terms(model: OmniModel, sampler: StageSampler, datasets: Mapping[Modality, ModalityDataset],
                      sys_prompt: str = "") -> Callable[[int], list[Term]]:
    def terms(step: int) -> list[Term]:
        batch = sampler.batch(step)
        rng = np.random.default_rng([sampler.seed, 0xD1A, step])
        out = []
        for m, idx in batch.groups.items():
            ds = datasets[m]
            dialogs = [sample_dialog(ds.specs[i], m, rng) for i in idx]
            loss = model.instruction_loss(m, [ds.inputs[i] for i in idx], sys_prompt, dialogs)
            out.append((m.value, loss, len(idx) / batch.size))
        return out

    return terms


def routing_probe(model: OmniModel, datasets: Mapping[Modality, ModalityDataset], modalities: Sequence[Modality],
                  n: int = 8) -> Callable[[], dict]:
    def probe() -> dict:
        out = {}
        with no_grad():
            for m in modalities:
                ds = datasets[m]
                pre = model.prefix(m, ds.inputs[: min(n, len(ds))])
                w = pre.routing_weights.data.reshape(-1, pre.routing_weights.shape[-1])
                out[m.value] = [float(x) for x in w.mean(axis=0)]
        return out

    return probe


# -- phase entry points ----------------------------------------------------------------


def pretrain_decoder(model: OmniModel, cfg: RunConfig, seed: int, run_dir: str | Path | None = None,
                     metrics: MetricsWriter | None = None, steps: int | None = None) -> PhaseResult:
    st = cfg.stages.lm_pretrain
    if steps is not None:
        st = StageConfig(**{**st.__dict__, "steps": steps})
    return run_phase(model, phase="lm_pretrain", stage="lm_pretrain", stage_cfg=st, seed=seed,
                     terms=lm_pretrain_terms(model, st.batch_size, seed), run_dir=run_dir, metrics=metrics,
                     log_every=cfg.io.log_every, config_hash=cfg.digest(), save=False)


def train_alignment_stage(plan: StagePlan, model: OmniModel, datasets: Mapping[Modality, ModalityDataset],
                          cfg: RunConfig, seed: int, *, run_dir: str | Path | None = None,
                          metrics: MetricsWriter | None = None, state: TrainState | None = None,
                          optimizer: AdamW | None = None, stop_at: int | None = None,
                          router_type: str | None = None, train_encoder: bool | None = None,
                          replay_mode: str | None = None, save: bool = True) -> PhaseResult:
    st = getattr(cfg.stages, plan.stage)
    st = StageConfig(**{**st.__dict__, "steps": plan.steps, "batch_size": plan.batch_size, "lr": plan.lr,
                        "warmup": plan.warmup})
    sampler = StageSampler(plan, datasets, seed, replay_mode or cfg.stages.replay_mode, _STREAMS[plan.stage])
    enc = (not cfg.model.frozen_encoder) if train_encoder is None else train_encoder
    probe = routing_probe(model, datasets, plan.modalities)
    res = run_phase(model, phase="alignment", stage=plan.stage, stage_cfg=st, seed=seed,
                    terms=alignment_terms(model, sampler, datasets, router_type), state=state, optimizer=optimizer,
                    stop_at=stop_at, run_dir=run_dir, metrics=metrics, log_every=cfg.io.log_every,
                    train_encoder=enc, config_hash=cfg.digest(), save=save, routing_probe=probe)
    res.routing = probe()
    return res


def train_instruction(model: OmniModel, datasets: Mapping[Modality, ModalityDataset], cfg: RunConfig, seed: int,
                      *, plan: StagePlan, mode: str = "joint", run_dir: str | Path | None = None,
                      metrics: MetricsWriter | None = None, state: TrainState | None = None,
                      optimizer: AdamW | None = None, stop_at: int | None = None, sys_prompt: str = "",
                      save: bool = True) -> PhaseResult:
    """Decoder-only finetuning on instruction dialogs.

    ``mode="joint"`` samples all plan modalities together; ``"separate"``
    expects a plan restricted to a single modality.
    """
    if mode not in ("joint", "separate"):
        raise ValueError(f"instruction mode must be 'joint' or 'separate', got {mode!r}")
    if mode == "separate" and len(plan.modalities) != 1:
        raise ValueError("separate instruction tuning needs a single-modality plan")
    st = StageConfig(**{**cfg.stages.instruct.__dict__, "steps": plan.steps, "batch_size": plan.batch_size,
                        "lr": plan.lr, "warmup": plan.warmup})
    sampler = StageSampler(plan, datasets, seed, "uniform", _STREAMS["instruct"])
    return run_phase(model, phase="instruction", stage="instruct", stage_cfg=st, seed=seed,
                     terms=instruction_terms(model, sampler, datasets, sys_prompt), state=state, optimizer=optimizer,
                     stop_at=stop_at, run_dir=run_dir, metrics=metrics, log_every=cfg.io.log_every,
                     config_hash=cfg.digest(), save=save)


def validation_loss(model: OmniModel, ds: ModalityDataset, batch_size: int = 64,
                    router_type: str | None = None) -> float:
    """Example-weighted mean caption loss over a whole dataset."""
    total = 0.0
    with no_grad():
        for start in range(0, len(ds), batch_size):
            idx = range(start, min(start + batch_size, len(ds)))
            loss = model.alignment_loss(ds.modality, [ds.inputs[i] for i in idx],
                                        [caption_for_scene(ds.specs[i]) for i in idx], router_type)
            total += float(loss.data) * len(idx)
    return total / len(ds)


def batch_summary(batch: Batch) -> dict[str, int]:
    return batch.counts()
