from .ablation import AXES, AblationRunner, AblationTable, axis_variants, run_ablation
from .evaluation import TASKS, evaluate
from .freeze import FREEZE_POLICIES, FreezeLedger, FreezeViolation, apply_freeze_policy, component_hashes
from .plans import STAGES, StagePlan, normalize_stage, stage_plan
from .sampler import Batch, StageSampler, build_stage_sampler
from .stages import StageReport, latest_checkpoint, load_model, replay_echo, require_checkpoint, run_stage
from .training import (
    MetricsWriter, PhaseResult, pretrain_decoder, run_phase, train_alignment_stage, train_instruction,
    validation_loss,
)

__all__ = [
    "AXES", "AblationRunner", "AblationTable", "Batch", "FREEZE_POLICIES", "FreezeLedger", "FreezeViolation",
    "MetricsWriter", "PhaseResult", "STAGES", "StagePlan", "StageReport", "StageSampler", "TASKS",
    "apply_freeze_policy", "axis_variants", "build_stage_sampler", "component_hashes", "evaluate",
    "latest_checkpoint", "load_model", "normalize_stage", "pretrain_decoder", "replay_echo", "require_checkpoint",
    "run_ablation", "run_phase", "run_stage", "stage_plan", "train_alignment_stage", "train_instruction",
    "validation_loss",
]
