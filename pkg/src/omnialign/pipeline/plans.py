"""Stage plans for progressive alignment and instruction tuning."""

from __future__ import annotations

from dataclasses import dataclass

from ..config import RunConfig, StageConfig
from ..modality import ALL_MODALITIES, Modality

STAGES = ("I", "II", "III", "instruct")

_NEW = {
    "I": (Modality.IMAGE,),
    "II": (Modality.VIDEO, Modality.AUDIO, Modality.POINT),
    "III": (Modality.DEPTH, Modality.NORMAL, Modality.IMU, Modality.FMRI),
    "instruct": ALL_MODALITIES,
}
_REPLAY = {
    "I": (),
    "II": (Modality.IMAGE,),
    "III": (Modality.IMAGE, Modality.VIDEO, Modality.AUDIO, Modality.POINT),
    "instruct": (),
}
# The stage whose checkpoint a stage starts from.
PREREQUISITE = {"I": None, "II": "I", "III": "II", "instruct": "III"}


@dataclass(frozen=True)
class StagePlan:
    stage: str
    new_modalities: tuple[Modality, ...]
    replay_modalities: tuple[Modality, ...]
    steps: int
    batch_size: int
    lr: float
    warmup: int

    @property
    def modalities(self) -> tuple[Modality, ...]:
        return self.new_modalities + tuple(m for m in self.replay_modalities if m not in self.new_modalities)

    @property
    def phase(self) -> str:
        return "instruction" if self.stage == "instruct" else "alignment"


def normalize_stage(stage: str) -> str:
    s = str(stage).strip()
    if s.lower() in ("instruct", "instruction"):
        return "instruct"
    if s.upper() in ("I", "II", "III"):
        return s.upper()
    raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")


def stage_plan(stage: str, cfg: RunConfig | None = None, replay: bool | None = None,
               modalities: tuple[Modality, ...] | None = None) -> StagePlan:
    """The plan for ``stage``; ``replay=False`` drops the replay set, ``modalities`` restricts both sets."""
    stage = normalize_stage(stage)
    st: StageConfig = getattr(cfg.stages, stage) if cfg is not None else StageConfig()
    use_replay = st.replay if replay is None else replay
    new = _NEW[stage]
    rep = _REPLAY[stage] if use_replay else ()
    if modalities is not None:
        keep = set(modalities)
        new = tuple(m for m in new if m in keep)
        rep = tuple(m for m in rep if m in keep)
    return StagePlan(stage, new, rep, st.steps, st.batch_size, st.lr, st.warmup)
