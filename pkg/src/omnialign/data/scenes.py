"""Synthetic scenes and their deterministic renderings into all eight modalities.

A scene is one of 54 attribute combinations (3 shapes x 3 colors x 2 sizes
x 3 counts) plus a seed that only controls layout jitter. Every modality is
a pure function of the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..config import TokenizerConfig
from ..modality import Modality
from ..tokenizers import RawSignal

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue")
SIZES = ("small", "large")
COUNTS = (1, 2, 3)
GRID_SIZE = len(SHAPES) * len(COLORS) * len(SIZES) * len(COUNTS)

_RGB = {"red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0), "blue": (0.0, 0.0, 1.0)}
_FMRI_SEED = 20231203


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    size: str
    count: int
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES or self.color not in COLORS or self.size not in SIZES or self.count not in COUNTS:
            raise ValueError(f"invalid scene attributes {self}")

    @property
    def index(self) -> int:
        """Position in the 54-element attribute grid."""
        return (((SHAPES.index(self.shape) * len(COLORS) + COLORS.index(self.color)) * len(SIZES)
                 + SIZES.index(self.size)) * len(COUNTS) + COUNTS.index(self.count))

    @classmethod
    def from_index(cls, index: int, seed: int = 0) -> "SceneSpec":
        index, ci = divmod(int(index), len(COUNTS))
        index, zi = divmod(index, len(SIZES))
        si, coi = divmod(index, len(COLORS))
        return cls(SHAPES[si], COLORS[coi], SIZES[zi], COUNTS[ci], seed)

    def attributes(self) -> tuple[str, str, str, int]:
        return (self.shape, self.color, self.size, self.count)


def generate_scene(seed: int) -> SceneSpec:
    rng = np.random.default_rng([int(seed), 0x5CE])
    return SceneSpec.from_index(int(rng.integers(GRID_SIZE)), seed=int(seed))


@dataclass
class Layout:
    """Object centers in unit coordinates ([0, 1] x [0, 1]), motion and timing."""

    centers: list[tuple[float, float]]
    motion: tuple[int, int]
    n_frames: int
    pulse_offset: int
    noise_seed: int
    extras: dict = field(default_factory=dict)


_CELLS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))
_MOTIONS = ((1, 0), (0, 1), (-1, 0), (0, -1))


def scene_layout(spec: SceneSpec, frames: tuple[int, int] = (2, 4)) -> Layout:
    rng = np.random.default_rng([spec.seed, 0x1A70])
    cells = rng.permutation(len(_CELLS))[: spec.count]
    jitter = rng.integers(-1, 2, size=(spec.count, 2)) / 28.0
    centers = [(_CELLS[c][0] + jx, _CELLS[c][1] + jy) for c, (jx, jy) in zip(sorted(cells), jitter)]
    motion = _MOTIONS[int(rng.integers(len(_MOTIONS)))]
    lo, hi = frames
    n_frames = int(rng.integers(lo, hi + 1))
    pulse_offset = int(rng.integers(0, 4))
    return Layout(centers, motion, n_frames, pulse_offset, int(rng.integers(2**31)))


# -- rasterisation -----------------------------------------------------------------


def _shape_mask(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    if shape == "square":
        s = 0.85 * r
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    # Upward triangle: apex at the top row, base at the bottom.
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)


def _radius_px(size: str, image_size: int) -> float:
    return (3.0 if size == "small" else 6.0) * image_size / 28.0


def _raster(spec: SceneSpec, layout: Layout, image_size: int, shift: tuple[int, int] = (0, 0)):
    """Per-pixel coverage mask and normalised distance-to-center for the scene."""
    ys, xs = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    r = _radius_px(spec.size, image_size)
    covered = np.zeros((image_size, image_size), dtype=bool)
    closeness = np.zeros((image_size, image_size))
    for cx, cy in layout.centers:
        px = cx * image_size - 0.5 + shift[0]
        py = cy * image_size - 0.5 + shift[1]
        dx, dy = xs - px, ys - py
        m = _shape_mask(spec.shape, dx, dy, r)
        covered |= m
        close = np.clip(1.0 - np.sqrt(dx * dx + dy * dy) / (1.5 * r), 0.0, 1.0)
        closeness = np.where(m, np.maximum(closeness, close), closeness)
    return covered, closeness


def render_image(spec: SceneSpec, cfg: TokenizerConfig, shift: tuple[int, int] = (0, 0)) -> np.ndarray:
    layout = scene_layout(spec, cfg.video_frames)
    covered, _ = _raster(spec, layout, cfg.image_size, shift)
    img = np.ones((3, cfg.image_size, cfg.image_size), dtype=np.float32)
    rgb = np.asarray(_RGB[spec.color], dtype=np.float32)
    img[:, covered] = rgb[:, None]
    return img


def _depth_map(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    layout = scene_layout(spec, cfg.video_frames)
    covered, closeness = _raster(spec, layout, cfg.image_size)
    return np.where(covered, 0.7 - 0.4 * closeness, 1.0)


def render_depth(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    d = _depth_map(spec, cfg).astype(np.float32)
    return np.repeat(d[None], 3, axis=0)


def render_normal(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    d = _depth_map(spec, cfg)
    gy, gx = np.gradient(d)
    n = np.stack([-gx * 4.0, -gy * 4.0, np.ones_like(d)])
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    return ((n + 1.0) * 0.5).astype(np.float32)


def render_video(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    layout = scene_layout(spec, cfg.video_frames)
    mx, my = layout.motion
    frames = [render_image(spec, cfg, shift=(mx * t, my * t)) for t in range(layout.n_frames)]
    return np.stack(frames)


def render_audio(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    layout = scene_layout(spec, cfg.video_frames)
    bins, frames = cfg.audio_bins, cfg.audio_frames
    centers = np.array([0.2, 0.5, 0.8]) * bins
    center = centers[SHAPES.index(spec.shape)]
    half = (1.0 if spec.size == "small" else 3.0) * bins / 32.0
    amp = (0.4, 0.7, 1.0)[COLORS.index(spec.color)]
    f = np.arange(bins)[:, None]
    band = np.exp(-0.5 * ((f - center) / half) ** 2)
    t = np.arange(frames)[None, :]
    slot = frames // 3
    width = max(slot * 2 // 3, 1)
    envelope = np.zeros((1, frames))
    for k in range(spec.count):
        start = k * slot + layout.pulse_offset * frames // 64
        envelope = np.maximum(envelope, ((t >= start) & (t < start + width)).astype(float))
    noise = np.random.default_rng(layout.noise_seed).standard_normal((bins, frames)) * 0.02
    spec_img = amp * band * envelope + noise
    return spec_img[None].astype(np.float32)


def _outline(shape: str, t: np.ndarray, r: float) -> np.ndarray:
    """Points on a shape outline for parameters ``t`` in [0, 1)."""
    if shape == "circle":
        a = 2 * np.pi * t
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    if shape == "square":
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1], [-1, -1]], dtype=float) * 0.85 * r
    else:
        corners = np.array([[0, -1], [1, 1], [-1, 1], [0, -1]], dtype=float) * r
    seg = len(corners) - 1
    pos = t * seg
    i = np.minimum(pos.astype(int), seg - 1)
    frac = (pos - i)[:, None]
    return corners[i] * (1 - frac) + corners[i + 1] * frac


def render_point(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    layout = scene_layout(spec, cfg.video_frames)
    rng = np.random.default_rng(layout.noise_seed)
    n = cfg.point_raw
    per = [n // spec.count + (1 if k < n % spec.count else 0) for k in range(spec.count)]
    r = 0.12 if spec.size == "small" else 0.22
    rgb = np.asarray(_RGB[spec.color])
    chunks = []
    for (cx, cy), m in zip(layout.centers, per):
        t = np.sort(rng.random(m))
        xy = _outline(spec.shape, t, r) + np.array([cx - 0.5, 0.5 - cy]) * 2.0 * 0.5
        z = rng.standard_normal((m, 1)) * 0.01
        chunks.append(np.hstack([xy, z, np.tile(rgb, (m, 1))]))
    return np.vstack(chunks).astype(np.float32)


def render_imu(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    layout = scene_layout(spec, cfg.video_frames)
    length = cfg.imu_length
    t = np.arange(length) / 64.0
    freq = (2.0, 4.0, 6.0)[SHAPES.index(spec.shape)]
    amp = 0.5 if spec.size == "small" else 1.0
    phase = (spec.count - 1) * np.pi / 3.0
    ci = COLORS.index(spec.color)
    rows = []
    for c in range(6):
        wave = np.sin if c < 3 else np.cos
        rows.append(amp * wave(2 * np.pi * freq * t + phase + c * np.pi / 6) + (0.5 if c % 3 == ci else 0.0))
    noise = np.random.default_rng(layout.noise_seed).standard_normal((6, length)) * 0.05
    return (np.stack(rows) + noise).astype(np.float32)


@lru_cache(maxsize=8)
def fmri_projection(fmri_dim: int, image_size: int) -> np.ndarray:
    """Fixed global random view of image pixels (independent of the scene)."""
    rng = np.random.default_rng(_FMRI_SEED)
    n_pix = 3 * image_size * image_size
    return (rng.standard_normal((fmri_dim, n_pix)) / np.sqrt(n_pix)).astype(np.float32)


def render_fmri(spec: SceneSpec, cfg: TokenizerConfig) -> np.ndarray:
    img = render_image(spec, cfg)
    proj = fmri_projection(cfg.fmri_dim, cfg.image_size)
    return (proj @ (img.reshape(-1) - 0.5) * 4.0).astype(np.float32)


_RENDERERS = {
    Modality.IMAGE: render_image,
    Modality.VIDEO: render_video,
    Modality.AUDIO: render_audio,
    Modality.POINT: render_point,
    Modality.IMU: render_imu,
    Modality.FMRI: render_fmri,
    Modality.DEPTH: render_depth,
    Modality.NORMAL: render_normal,
}


def render_modality(spec: SceneSpec, modality: Modality | str, cfg: TokenizerConfig | None = None) -> RawSignal:
    cfg = cfg or TokenizerConfig()
    modality = Modality.parse(modality)
    return RawSignal(modality, _RENDERERS[modality](spec, cfg))
