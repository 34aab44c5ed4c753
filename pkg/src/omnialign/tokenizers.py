"""Lightweight per-modality tokenizers mapping raw signals to ``[L, D]`` token sequences.

Every tokenizer is a single convolution. Batched inputs carry one extra
leading axis; the ``tokenize_*`` methods on :class:`ModalityTokenizers`
operate on a single :class:`RawSignal`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import TokenizerConfig
from .errors import ConfigurationError, DimensionError, EmptyInputError
from .modality import Modality
from .numerics import Module, Parameter, Tensor, ops
from .numerics.nn import init_normal


@dataclass
class RawSignal:
    modality: Modality
    payload: np.ndarray

    def __post_init__(self):
        self.modality = Modality.parse(self.modality)
        self.payload = np.asarray(self.payload)
        if not np.isfinite(self.payload).all():
            raise ValueError(f"{self.modality.value} payload contains non-finite values")


@dataclass
class TokenSequence:
    modality: Modality
    tokens: Tensor

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]


def _channels_to_tokens(x: Tensor) -> Tensor:
    """``[..., D, L]`` -> ``[..., L, D]``."""
    return ops.swapaxes(x, -1, -2)


class VisualTokenizer(Module):
    """Patch embedding: one Conv2D with kernel == stride == patch."""

    def __init__(self, width: int, patch: int, rng: np.random.Generator, dtype=np.float32, channels: int = 3):
        fan_in = channels * patch * patch
        self.weight = Parameter(init_normal(rng, (width, channels, patch, patch), fan_in ** -0.5, dtype))
        self.bias = Parameter(np.zeros(width, dtype=dtype), decay=False)
        self._patch = patch

    def forward(self, images: np.ndarray | Tensor) -> Tensor:
        h, w = images.shape[-2:]
        p = self._patch
        if h % p or w % p:
            raise ConfigurationError(f"spatial extent {(h, w)} is not divisible by patch size {p}")
        x = ops.conv2d(_as_input(images, self.weight), self.weight, self.bias, (p, p))
        *lead, d, gh, gw = x.shape
        return _channels_to_tokens(ops.reshape(x, (*lead, d, gh * gw)))


class AudioTokenizer(Module):
    """Conv2D over a ``1 x H x W`` spectrogram with kernel 16 and stride 10 by default."""

    def __init__(self, width: int, kernel: tuple[int, int], stride: tuple[int, int],
                 rng: np.random.Generator, dtype=np.float32):
        kh, kw = kernel
        self.weight = Parameter(init_normal(rng, (width, 1, kh, kw), (kh * kw) ** -0.5, dtype))
        self.bias = Parameter(np.zeros(width, dtype=dtype), decay=False)
        self._stride = tuple(stride)

    def forward(self, spec: np.ndarray | Tensor) -> Tensor:
        x = ops.conv2d(_as_input(spec, self.weight), self.weight, self.bias, self._stride)
        *lead, d, gh, gw = x.shape
        return _channels_to_tokens(ops.reshape(x, (*lead, d, gh * gw)))


class PointTokenizer(Module):
    """FPS + KNN grouping followed by a 1x1 Conv2D and a max over each group."""

    def __init__(self, width: int, n_samples: int, n_groups: int, group_size: int,
                 rng: np.random.Generator, dtype=np.float32):
        if n_groups > n_samples or group_size > n_samples:
            raise ConfigurationError("point groups and group size must not exceed the sample count")
        self.weight = Parameter(init_normal(rng, (width, 6, 1, 1), 6 ** -0.5, dtype))
        self.bias = Parameter(np.zeros(width, dtype=dtype), decay=False)
        self._n_samples = n_samples
        self._n_groups = n_groups
        self._group_size = group_size

    def group(self, points: np.ndarray) -> np.ndarray:
        return group_points(points, self._n_samples, self._n_groups, self._group_size)

    def forward(self, points: np.ndarray | Sequence[np.ndarray]) -> Tensor:
        arr = np.asarray(points) if not isinstance(points, np.ndarray) else points
        if arr.ndim == 2:
            grouped = self.group(arr)
        else:
            grouped = np.stack([self.group(p) for p in arr])
        return self.embed_groups(grouped)

    def embed_groups(self, grouped: np.ndarray) -> Tensor:
        """``[..., G_n, G, 6]`` grouped points -> ``[..., G_n, D]`` tokens."""
        x = Tensor(np.moveaxis(grouped, -1, -3).astype(self.weight.dtype))  # [..., 6, G_n, G]
        feats = ops.conv2d(x, self.weight, self.bias, (1, 1))  # [..., D, G_n, G]
        pooled = ops.max(feats, axis=-1)  # [..., D, G_n]
        return _channels_to_tokens(pooled)


class IMUTokenizer(Module):
    """Conv1D with 6 input channels, kernel 10, stride 1."""

    def __init__(self, width: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(init_normal(rng, (width, 6, kernel), (6 * kernel) ** -0.5, dtype))
        self.bias = Parameter(np.zeros(width, dtype=dtype), decay=False)

    def forward(self, signal: np.ndarray | Tensor) -> Tensor:
        return _channels_to_tokens(ops.conv1d(_as_input(signal, self.weight), self.weight, self.bias, 1))


class FMRITokenizer(Module):
    """1x1 Conv1D from the voxel vector to ``tokens * D`` channels, resized to ``[tokens, D]``."""

    def __init__(self, width: int, fmri_dim: int, n_tokens: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(init_normal(rng, (n_tokens * width, fmri_dim, 1), fmri_dim ** -0.5, dtype))
        self.bias = Parameter(np.zeros(n_tokens * width, dtype=dtype), decay=False)
        self._fmri_dim = fmri_dim
        self._n_tokens = n_tokens
        self._width = width

    def forward(self, vec: np.ndarray | Tensor) -> Tensor:
        if vec.shape[-1] != self._fmri_dim:
            raise DimensionError(f"fMRI vector length {vec.shape[-1]} != configured {self._fmri_dim}")
        x = _as_input(vec, self.weight)
        x = ops.reshape(x, x.shape + (1,))  # [..., F, 1]
        out = ops.conv1d(x, self.weight, self.bias, 1)  # [..., tokens*D, 1]
        lead = out.shape[:-2]
        return _channels_to_tokens(ops.reshape(out, (*lead, self._width, self._n_tokens)))


def _as_input(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# -- point-cloud index helpers ------------------------------------------------


def fps_sample(points: np.ndarray, n: int, start: int = 0) -> list[int]:
    """Greedy furthest point sampling on ``[P, 3]`` coordinates.

    Ties in the max-min distance go to the lowest index; selected points are
    excluded so the output never repeats an index.
    """
    xyz = np.asarray(points, dtype=np.float64)[:, :3]
    p = xyz.shape[0]
    if not 1 <= n <= p:
        raise ValueError(f"fps_sample: need 1 <= n <= {p}, got n={n}")
    selected = [int(start)]
    dist = np.full(p, np.inf)
    taken = np.zeros(p, dtype=bool)
    taken[start] = True
    last = int(start)
    for _ in range(n - 1):
        diff = xyz - xyz[last]
        dist = np.minimum(dist, np.einsum("ij,ij->i", diff, diff))
        masked = np.where(taken, -1.0, dist)
        last = int(np.argmax(masked))
        taken[last] = True
        selected.append(last)
    return selected


def knn_group(points: np.ndarray, centers: Sequence[int], group_size: int) -> np.ndarray:
    """Gather the ``group_size`` nearest points (xyz distance) around each center.

    Returns ``[len(centers), group_size, C]``. Ties break toward lower indices.
    """
    pts = np.asarray(points)
    if group_size > pts.shape[0]:
        raise ValueError(f"knn_group: group size {group_size} exceeds {pts.shape[0]} points")
    xyz = pts[:, :3].astype(np.float64)
    out = np.empty((len(centers), group_size, pts.shape[1]), dtype=pts.dtype)
    for i, c in enumerate(centers):
        diff = xyz - xyz[c]
        d = np.einsum("ij,ij->i", diff, diff)
        order = np.argsort(d, kind="stable")[:group_size]
        out[i] = pts[order]
    return out


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Lexicographic sort by x, y, z, then the remaining channels."""
    keys = tuple(points[:, c] for c in range(points.shape[1] - 1, -1, -1))
    return points[np.lexsort(keys)]


def group_points(points: np.ndarray, n_samples: int, n_groups: int, group_size: int) -> np.ndarray:
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 6:
        raise DimensionError(f"point cloud must be [P, 6], got {pts.shape}")
    if pts.shape[0] < n_samples:
        raise DimensionError(f"point cloud has {pts.shape[0]} points, need at least {n_samples}")
    pts = canonical_order(pts)
    sampled = pts[fps_sample(pts, n_samples, 0)]
    centers = fps_sample(sampled, n_groups, 0)
    return knn_group(sampled, centers, group_size)


# -- the per-modality bundle ----------------------------------------------------


class ModalityTokenizers(Module):
    """One tokenizer per modality; video reuses the image tokenizer frame by frame."""

    def __init__(self, width: int, cfg: TokenizerConfig, rng: np.random.Generator, dtype=np.float32):
        self.image = VisualTokenizer(width, cfg.patch, rng, dtype)
        self.depth = VisualTokenizer(width, cfg.patch, rng, dtype)
        self.normal = VisualTokenizer(width, cfg.patch, rng, dtype)
        self.audio = AudioTokenizer(width, cfg.audio_kernel, cfg.audio_stride, rng, dtype)
        self.point = PointTokenizer(width, cfg.point_samples, cfg.point_groups, cfg.point_group_size, rng, dtype)
        self.imu = IMUTokenizer(width, cfg.imu_kernel, rng, dtype)
        self.fmri = FMRITokenizer(width, cfg.fmri_dim, cfg.fmri_tokens, rng, dtype)
        self._cfg = cfg
        self._width = width

    @property
    def width(self) -> int:
        return self._width

    def for_modality(self, modality: Modality) -> Module:
        modality = Modality.parse(modality)
        if modality is Modality.VIDEO:
            return self.image
        return getattr(self, modality.value)

    def tokenize_batch(self, modality: Modality, batch: np.ndarray) -> Tensor:
        """Tokenize a stacked batch of same-shaped payloads (video: stacked frames)."""
        return self.for_modality(modality)(batch)

    # Single-signal entry points -------------------------------------------

    def tokenize_image(self, signal: RawSignal) -> TokenSequence:
        if signal.modality not in (Modality.IMAGE, Modality.DEPTH, Modality.NORMAL):
            raise ValueError(f"tokenize_image does not accept {signal.modality.value}")
        _expect_ndim(signal, 3)
        return TokenSequence(signal.modality, self.for_modality(signal.modality)(signal.payload))

    def tokenize_video(self, signal: RawSignal) -> list[TokenSequence]:
        _expect_ndim(signal, 4)
        if signal.payload.shape[0] == 0:
            raise EmptyInputError("video has no frames")
        tokens = self.image(signal.payload)
        return [TokenSequence(Modality.VIDEO, ops.getitem(tokens, t)) for t in range(tokens.shape[0])]

    def tokenize_audio(self, signal: RawSignal) -> TokenSequence:
        _expect_ndim(signal, 3)
        kh, kw = self._cfg.audio_kernel
        if signal.payload.shape[-1] < kw or signal.payload.shape[-2] < kh:
            raise DimensionError(f"spectrogram {signal.payload.shape} smaller than kernel {(kh, kw)}")
        return TokenSequence(Modality.AUDIO, self.audio(signal.payload))

    def tokenize_point(self, signal: RawSignal) -> TokenSequence:
        _expect_ndim(signal, 2)
        return TokenSequence(Modality.POINT, self.point(signal.payload))

    def tokenize_imu(self, signal: RawSignal) -> TokenSequence:
        _expect_ndim(signal, 2)
        if signal.payload.shape[-1] < self._cfg.imu_kernel:
            raise DimensionError(f"IMU length {signal.payload.shape[-1]} < kernel {self._cfg.imu_kernel}")
        return TokenSequence(Modality.IMU, self.imu(signal.payload))

    def tokenize_fmri(self, signal: RawSignal) -> TokenSequence:
        _expect_ndim(signal, 1)
        return TokenSequence(Modality.FMRI, self.fmri(signal.payload))

    def tokenize(self, signal: RawSignal) -> TokenSequence | list[TokenSequence]:
        m = signal.modality
        if m in (Modality.IMAGE, Modality.DEPTH, Modality.NORMAL):
            return self.tokenize_image(signal)
        return getattr(self, f"tokenize_{m.value}")(signal)


def _expect_ndim(signal: RawSignal, ndim: int) -> None:
    if signal.payload.ndim != ndim:
        raise DimensionError(
            f"{signal.modality.value} payload must have {ndim} axes, got shape {signal.payload.shape}")


def expected_token_count(modality: Modality, cfg: TokenizerConfig) -> int:
    """Sequence length each tokenizer produces under ``cfg`` (per frame for video)."""
    modality = Modality.parse(modality)
    if modality in (Modality.IMAGE, Modality.VIDEO, Modality.DEPTH, Modality.NORMAL):
        return (cfg.image_size // cfg.patch) ** 2
    if modality is Modality.AUDIO:
        kh, kw = cfg.audio_kernel
        sh, sw = cfg.audio_stride
        return ops.conv_output_size(cfg.audio_bins, kh, sh) * ops.conv_output_size(cfg.audio_frames, kw, sw)
    if modality is Modality.POINT:
        return cfg.point_groups
    if modality is Modality.IMU:
        return ops.conv_output_size(cfg.imu_length, cfg.imu_kernel, 1)
    return cfg.fmri_tokens
