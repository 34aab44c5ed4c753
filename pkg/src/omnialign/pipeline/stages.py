"""Stage orchestration: checkpoints chain I -> II -> III -> instruct inside one run directory."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..checkpoint import apply_entries, read_checkpoint, save_checkpoint, state_from_metadata
from ..config import ModelConfig, RunConfig, config_from_dict
from ..data.datasets import DatasetCache
from ..errors import PreconditionError
from ..modality import Modality
from ..model import OmniModel
from .evaluation import evaluate
from .plans import PREREQUISITE, normalize_stage, stage_plan
from .report import format_table, loss_table, write_json, write_loss_csv
from .training import MetricsWriter, PhaseResult, pretrain_decoder, train_alignment_stage, train_instruction, \
    validation_loss

log = logging.getLogger(__name__)

_CKPT_RE = re.compile(r"^ckpt_(\d+)\.olmc$")


def stage_dir(run_dir: str | Path, stage: str) -> Path:
    return Path(run_dir) / normalize_stage(stage)


def latest_checkpoint(directory: str | Path) -> Path | None:
    directory = Path(directory)
    if not directory.is_dir():
        return None
    found = [(int(m.group(1)), p) for p in directory.iterdir() if (m := _CKPT_RE.match(p.name))]
    return max(found)[1] if found else None


def require_checkpoint(run_dir: str | Path, stage: str) -> Path:
    path = latest_checkpoint(stage_dir(run_dir, stage))
    if path is None:
        expected = stage_dir(run_dir, stage) / "ckpt_<step>.olmc"
        raise PreconditionError(f"stage {stage} checkpoint not found; expected {expected} "
                                f"(run `train --stage {stage}` first)")
    return path


def model_config_from(meta: dict) -> ModelConfig:
    raw = meta.get("extra", {}).get("model")
    if raw is None:
        raise PreconditionError("checkpoint does not record its model configuration")
    return config_from_dict({"model": raw}).model


def load_model(path: str | Path, model_cfg: ModelConfig | None = None) -> tuple[OmniModel, dict]:
    """Rebuild the model a checkpoint was saved from and load its parameters."""
    meta, entries = read_checkpoint(path)
    cfg = model_cfg or model_config_from(meta)
    n_experts = int(meta.get("extra", {}).get("n_experts", cfg.num_experts))
    model = OmniModel(cfg, n_experts=n_experts)
    apply_entries(model, entries)
    return model, meta


@dataclass
class StageReport:
    stage: str
    checkpoint: Path | None
    losses: dict[str, list[float]]
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def table(self) -> str:
        parts = [format_table(loss_table(self.losses), ["modality", "steps", "first", "last", "drop"],
                              title=f"stage {self.stage}: per-modality training loss")]
        routing = self.metrics.get("routing", {})
        if routing:
            k = len(next(iter(routing.values())))
            rows = [{"modality": m, **{f"w{j}": w[j] for j in range(k)}} for m, w in routing.items()]
            parts.append(format_table(rows, ["modality", *[f"w{j}" for j in range(k)]],
                                      title="mean routing weight per expert"))
        per_mod = self.metrics.get("per_modality", {})
        if per_mod:
            cols = [c for c in ("caption-exact-match", "qa-token-accuracy", "perplexity")
                    if any(c in r for r in per_mod.values())]
            rows = [{"modality": m, **{c: r[c] for c in cols if c in r}} for m, r in per_mod.items()]
            parts.append(format_table(rows, ["modality", *cols], title="held-out evaluation"))
        for key, value in self.extra.items():
            parts.append(f"{key}: {value}")
        return "\n\n".join(parts)


def _finish(model: OmniModel, cfg: RunConfig, res: PhaseResult, stage: str, out: Path, cache: DatasetCache,
            modalities, phase: str, metrics_tasks=None, extra: dict | None = None) -> StageReport:
    evals = {m: cache.get(m, "eval") for m in modalities}
    tasks = metrics_tasks or (["caption-exact-match", "perplexity"] if phase == "alignment" else cfg.eval.tasks)
    metrics = evaluate(model, evals, tasks, phase, max_new=cfg.eval.max_new)
    report = StageReport(stage, res.checkpoint, res.state.losses, metrics, extra or {})
    write_loss_csv(res.state.losses, out / "losses.csv")
    write_json({"stage": stage, "checkpoint": str(res.checkpoint), "metrics": metrics, "extra": report.extra,
                "loss_table": loss_table(res.state.losses)}, out / "report.json")
    (out / "report.txt").write_text(report.table() + "\n")
    return report


def _record_model(res: PhaseResult, model: OmniModel, cfg: RunConfig) -> None:
    res.state.extra.update({"n_experts": model.n_experts, "model": cfg.to_dict()["model"]})


def run_stage(cfg: RunConfig, stage: str, run_dir: str | Path | None = None, seed: int | None = None,
              data_dir: str | Path | None = None, cache: DatasetCache | None = None) -> StageReport:
    """Run one stage end to end and write checkpoint, metrics and report under ``run_dir/<stage>``."""
    stage = normalize_stage(stage)
    run_dir = Path(run_dir or cfg.io.run_dir)
    seed = cfg.data.seed if seed is None else seed
    prereq = PREREQUISITE[stage]
    prev = require_checkpoint(run_dir, prereq) if prereq else None
    cache = cache or DatasetCache(cfg, data_dir)
    out = stage_dir(run_dir, stage)
    out.mkdir(parents=True, exist_ok=True)
    metrics = MetricsWriter(out / "metrics.jsonl")
    plan = stage_plan(stage, cfg)
    datasets = cache.all(plan.modalities)
    extra: dict = {}

    if stage == "I":
        model = OmniModel(cfg.model, n_experts=1)
        lm = pretrain_decoder(model, cfg, seed, metrics=metrics)
        extra["decoder_pretrain_loss"] = {"first": lm.losses[0], "last": lm.losses[-1]}
    else:
        model, _ = load_model(prev)
        if stage == "II":
            model.expand_experts(cfg.model.num_experts, cfg.stages.expert_init, seed)

    if plan.phase == "alignment":
        res = train_alignment_stage(plan, model, datasets, cfg, seed, run_dir=None, metrics=metrics)
    else:
        res = train_instruction(model, datasets, cfg, seed, plan=plan, run_dir=None, metrics=metrics)
    _record_model(res, model, cfg)
    res.checkpoint = save_checkpoint(model, res.state, out / f"ckpt_{res.state.step}.olmc")
    if stage in ("II", "III"):
        extra["image_val_loss"] = validation_loss(model, cache.get(Modality.IMAGE, "eval"))
    return _finish(model, cfg, res, stage, out, cache, plan.modalities, plan.phase, extra=extra)


def replay_echo(cfg: RunConfig, stage1_checkpoint: str | Path, seed: int | None = None,
                cache: DatasetCache | None = None, out: str | Path | None = None) -> dict:
    """Stage II with and without image replay from one stage-I checkpoint; image validation loss of each."""
    seed = cfg.data.seed if seed is None else seed
    cache = cache or DatasetCache(cfg)
    image_eval = cache.get(Modality.IMAGE, "eval")
    result = {"seed": seed, "stage1_checkpoint": str(stage1_checkpoint)}
    for replay in (True, False):
        model, _ = load_model(stage1_checkpoint, cfg.model)
        model.expand_experts(cfg.model.num_experts, cfg.stages.expert_init, seed)
        plan = stage_plan("II", cfg, replay=replay)
        res = train_alignment_stage(plan, model, cache.all(plan.modalities), cfg, seed, save=False)
        key = "with_replay" if replay else "without_replay"
        result[key] = {"image_val_loss": validation_loss(model, image_eval),
                       "final_loss": res.losses[-1]}
    result["replay_helps"] = result["with_replay"]["image_val_loss"] <= result["without_replay"]["image_val_loss"]
    if out is not None:
        write_json(result, Path(out) / "replay_echo.json")
    return result


def stage_state(path: str | Path):
    meta, _ = read_checkpoint(path)
    return state_from_metadata(meta)
