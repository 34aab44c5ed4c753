"""Matched ablation sweeps over training mode, expert init, expert count, router type and encoder freezing.

Every row of a sweep starts from the same pretrained decoder, uses the same
data seed and the same short schedule; only the swept setting differs.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..config import RunConfig, StageConfig
from ..data.datasets import DatasetCache
from ..modality import Modality
from ..model import OmniModel
from ..upm import RouterType
from .evaluation import evaluate
from .plans import StagePlan
from .report import format_table, write_json
from .training import pretrain_decoder, train_alignment_stage, train_instruction

log = logging.getLogger(__name__)

AXES = ("mode", "init", "experts", "router", "encoder")


@dataclass(frozen=True)
class Variant:
    label: str
    n_experts: int = 3
    expert_init: str = "image"
    router_type: str = "soft"
    train_encoder: bool = False
    mode: str = "joint"


def axis_variants(axis: str, cfg: RunConfig) -> list[Variant]:
    base = dict(n_experts=cfg.model.num_experts, expert_init=cfg.stages.expert_init,
                router_type=cfg.model.router_type, train_encoder=not cfg.model.frozen_encoder)

    def v(label, **kw):
        return Variant(label, **{**base, **kw})

    if axis == "mode":
        return [v("separate", mode="separate"), v("joint", mode="joint")]
    if axis == "init":
        return [v("random", expert_init="random"), v("image", expert_init="image")]
    if axis == "experts":
        return [v(f"K={k}", n_experts=k) for k in (1, 3, 5, 7)]
    if axis == "router":
        return [v(r, router_type=r) for r in ("constant", "sparse", "soft")]
    if axis == "encoder":
        return [v("frozen", train_encoder=False), v("trainable", train_encoder=True)]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


@dataclass
class AblationTable:
    axis: str
    seed: int
    modalities: list[str]
    rows: list[dict] = field(default_factory=list)

    METRICS = ("caption-exact-match", "qa-token-accuracy", "perplexity")

    def flat_rows(self) -> list[dict]:
        out = []
        for row in self.rows:
            flat = {"setting": row["setting"]}
            for m in self.modalities:
                for metric in self.METRICS:
                    flat[f"{m}/{metric}"] = row["per_modality"][m][metric]
            out.append(flat)
        return out

    def render(self) -> str:
        cols = ["setting"] + [f"{m}/{metric}" for m in self.modalities for metric in self.METRICS]
        header = f"ablation axis: {self.axis}   data seed: {self.seed}"
        return format_table(self.flat_rows(), cols, title=header)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "seed": self.seed, "modalities": self.modalities, "rows": self.rows}


def _short(st: StageConfig, steps: int) -> StageConfig:
    return StageConfig(**{**st.__dict__, "steps": steps, "warmup": max(1, min(st.warmup, steps // 5))})


def _plan(stage: str, new, replay, st: StageConfig) -> StagePlan:
    return StagePlan(stage, tuple(new), tuple(replay), st.steps, st.batch_size, st.lr, st.warmup)


class AblationRunner:
    """Caches the shared decoder pretraining and stage-I image alignment across rows."""

    def __init__(self, cfg: RunConfig, seed: int | None = None, cache: DatasetCache | None = None):
        self.cfg = cfg
        self.seed = cfg.data.seed if seed is None else seed
        self.modalities = [Modality.parse(m) for m in cfg.ablation.modalities]
        if Modality.IMAGE not in self.modalities:
            raise ValueError("ablation modalities must include image (the stage-I modality)")
        self.cache = cache or DatasetCache(cfg)
        self._decoder_model: OmniModel | None = None
        self._stage1: dict[bool, OmniModel] = {}

    def _pretrained(self) -> OmniModel:
        if self._decoder_model is None:
            model = OmniModel(self.cfg.model, n_experts=1)
            pretrain_decoder(model, self.cfg, self.seed)
            self._decoder_model = model
        return self._decoder_model

    def stage1(self, train_encoder: bool) -> OmniModel:
        if train_encoder not in self._stage1:
            model = copy.deepcopy(self._pretrained())
            st = _short(self.cfg.stages.I, self.cfg.ablation.stage_steps)
            plan = _plan("I", [Modality.IMAGE], [], st)
            train_alignment_stage(plan, model, self.cache.all(plan.modalities), self.cfg, self.seed,
                                  train_encoder=train_encoder, save=False)
            self._stage1[train_encoder] = model
        return self._stage1[train_encoder]

    def aligned(self, v: Variant) -> OmniModel:
        model = copy.deepcopy(self.stage1(v.train_encoder))
        model.expand_experts(v.n_experts, v.expert_init, self.seed)
        st = _short(self.cfg.stages.II, self.cfg.ablation.stage_steps)
        new = [m for m in self.modalities if m is not Modality.IMAGE]
        plan = _plan("II", new, [Modality.IMAGE], st)
        train_alignment_stage(plan, model, self.cache.all(plan.modalities), self.cfg, self.seed,
                              router_type=v.router_type, train_encoder=v.train_encoder, save=False)
        model.upm.router_type = RouterType.parse(v.router_type)
        return model

    def _instruct(self, model: OmniModel, modalities) -> OmniModel:
        st = _short(self.cfg.stages.instruct, self.cfg.ablation.instruct_steps)
        plan = _plan("instruct", modalities, [], st)
        mode = "joint" if len(modalities) > 1 else "separate"
        train_instruction(model, self.cache.all(modalities), self.cfg, self.seed, plan=plan, mode=mode, save=False)
        return model

    def _eval(self, model: OmniModel, modalities) -> dict:
        evals = {m: self.cache.get(m, "eval", self.cfg.ablation.eval_size) for m in modalities}
        return evaluate(model, evals, AblationTable.METRICS, "instruction", max_new=self.cfg.eval.max_new)

    def run_variant(self, v: Variant) -> dict:
        aligned = self.aligned(v)
        per_mod: dict = {}
        routing: dict = {}
        if v.mode == "joint":
            model = self._instruct(aligned, self.modalities)
            rec = self._eval(model, self.modalities)
            per_mod, routing = rec["per_modality"], rec["routing"]
        else:
            for m in self.modalities:
                model = self._instruct(copy.deepcopy(aligned), [m])
                rec = self._eval(model, [m])
                per_mod.update(rec["per_modality"])
                routing.update(rec["routing"])
        for row in per_mod.values():
            row.pop("samples", None)
        return {"setting": v.label, "variant": v.__dict__, "per_modality": per_mod, "routing": routing}

    def run(self, axis: str) -> AblationTable:
        table = AblationTable(axis, self.seed, [m.value for m in self.modalities])
        for v in axis_variants(axis, self.cfg):
            log.info("ablation %s: %s", axis, v.label)
            table.rows.append(self.run_variant(v))
        return table


def run_ablation(cfg: RunConfig, axis: str, seed: int | None = None, out_dir: str | Path | None = None,
                 runner: AblationRunner | None = None) -> AblationTable:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    runner = runner or AblationRunner(cfg, seed)
    table = runner.run(axis)
    if out_dir is not None:
        out = Path(out_dir)
        write_json(table.to_dict(), out / f"ablation_{axis}.json")
        (out / f"ablation_{axis}.txt").write_text(table.render() + "\n")
    return table
