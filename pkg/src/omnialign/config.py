"""Run configuration: nested dataclasses loaded from YAML with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError


@dataclass
class TokenizerConfig:
    image_size: int = 28
    patch: int = 7
    audio_bins: int = 32
    audio_frames: int = 64
    audio_kernel: tuple[int, int] = (16, 16)
    audio_stride: tuple[int, int] = (10, 10)
    point_raw: int = 128
    point_samples: int = 64
    point_groups: int = 8
    point_group_size: int = 8
    imu_length: int = 64
    imu_kernel: int = 10
    fmri_dim: int = 64
    fmri_tokens: int = 4
    video_frames: tuple[int, int] = (2, 4)


@dataclass
class ModelConfig:
    width: int = 64
    encoder_depth: int = 2
    encoder_heads: int = 4
    max_len: int = 64
    frozen_encoder: bool = True
    num_modality_tokens: int = 4
    num_experts: int = 3
    expert_depth: int = 2
    expert_heads: int = 4
    router_type: str = "soft"
    lm_width: int = 64
    lm_depth: int = 2
    lm_heads: int = 4
    max_seq: int = 160
    dtype: str = "float32"
    init_seed: int = 0
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)


@dataclass
class DataConfig:
    seed: int = 0
    train_size: int = 512
    eval_size: int = 128
    sizes: dict[str, int] = field(default_factory=dict)


@dataclass
class StageConfig:
    steps: int = 1000
    lr: float = 1e-3
    warmup: int = 50
    batch_size: int = 16
    accum_steps: int = 1
    grad_clip: float = 1.0
    weight_decay: float = 0.1
    replay: bool = True


@dataclass
class StagesConfig:
    lm_pretrain: StageConfig = field(default_factory=lambda: StageConfig(steps=600, lr=3e-3, warmup=30, batch_size=32))
    I: StageConfig = field(default_factory=lambda: StageConfig(steps=1500, lr=2e-3, warmup=50))
    II: StageConfig = field(default_factory=lambda: StageConfig(steps=800, lr=1e-3, warmup=40))
    III: StageConfig = field(default_factory=lambda: StageConfig(steps=800, lr=1e-3, warmup=40))
    instruct: StageConfig = field(default_factory=lambda: StageConfig(steps=800, lr=1e-3, warmup=40))
    expert_init: str = "image"
    replay_mode: str = "uniform"


@dataclass
class AblationConfig:
    modalities: list[str] = field(default_factory=lambda: ["image", "video", "audio"])
    stage_steps: int = 200
    instruct_steps: int = 150
    eval_size: int = 48


@dataclass
class EvalConfig:
    tasks: list[str] = field(default_factory=lambda: ["caption-exact-match", "qa-token-accuracy", "perplexity"])
    max_new: int = 40


@dataclass
class IOConfig:
    run_dir: str = "runs/desk"
    log_every: int = 50


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    stages: StagesConfig = field(default_factory=StagesConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def to_dict(self) -> dict[str, Any]:
        return _to_plain(dataclasses.asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def size_for(self, modality: str) -> int:
        return int(self.data.sizes.get(modality, self.data.train_size))


def _to_plain(value):
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def _build(cls, raw: dict[str, Any], path: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigurationError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in raw.items():
        current = getattr(defaults, name)
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, where)
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(current):
                raise ConfigurationError(f"{where}: expected a list of {len(current)} values")
            kwargs[name] = tuple(type(c)(v) for c, v in zip(current, value))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"{where}: expected a boolean")
            kwargs[name] = value
        elif isinstance(current, (int, float)) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"{where}: expected a number, got {value!r}")
            kwargs[name] = type(current)(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(raw: dict[str, Any] | None) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "")
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def validate(cfg: RunConfig) -> None:
    m = cfg.model
    if m.width % m.encoder_heads or m.width % m.expert_heads:
        raise ConfigurationError(f"model.width={m.width} must be divisible by the head counts")
    if m.lm_width % m.lm_heads:
        raise ConfigurationError(f"model.lm_width={m.lm_width} must be divisible by lm_heads")
    if m.router_type not in ("soft", "sparse", "constant"):
        raise ConfigurationError(f"model.router_type must be soft, sparse or constant, got {m.router_type!r}")
    if m.num_experts < 1 or m.num_modality_tokens < 1:
        raise ConfigurationError("model.num_experts and model.num_modality_tokens must be positive")
    if m.dtype not in ("float32", "float64"):
        raise ConfigurationError(f"model.dtype must be float32 or float64, got {m.dtype!r}")
    if cfg.stages.expert_init not in ("image", "random"):
        raise ConfigurationError("stages.expert_init must be 'image' or 'random'")
    if cfg.stages.replay_mode not in ("uniform", "old_new"):
        raise ConfigurationError("stages.replay_mode must be 'uniform' or 'old_new'")
    from .modality import Modality

    for name, size in cfg.data.sizes.items():
        Modality.parse(name)
        if int(size) <= 0:
            raise ConfigurationError(f"data.sizes.{name} must be positive, got {size}")
    if cfg.data.train_size <= 0 or cfg.data.eval_size <= 0:
        raise ConfigurationError("data.train_size and data.eval_size must be positive")
    for name in ("lm_pretrain", "I", "II", "III", "instruct"):
        st = getattr(cfg.stages, name)
        if st.steps < 1 or st.batch_size < 1 or st.warmup < 1 or st.accum_steps < 1:
            raise ConfigurationError(f"stages.{name}: steps, batch_size, warmup and accum_steps must be >= 1")


def full_scale_model() -> ModelConfig:
    """Architectural constants of the full-size system (not trainable on a desk)."""
    return ModelConfig(
        width=1024, encoder_depth=24, encoder_heads=16, max_len=2048, num_modality_tokens=30,
        num_experts=3, expert_depth=8, expert_heads=16, lm_width=4096, lm_depth=32, lm_heads=32,
        max_seq=2048,
        tokenizer=TokenizerConfig(
            image_size=224, patch=14, audio_bins=128, audio_frames=1024, point_raw=8192,
            point_samples=8192, point_groups=512, point_group_size=32, imu_length=2000,
            fmri_dim=15724, fmri_tokens=8,
        ),
    )
