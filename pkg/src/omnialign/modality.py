from __future__ import annotations

from enum import Enum


class Modality(str, Enum):
    IMAGE = "image"
    VIDEO = "video"
    AUDIO = "audio"
    POINT = "point"
    IMU = "imu"
    FMRI = "fmri"
    DEPTH = "depth"
    NORMAL = "normal"

    @classmethod
    def parse(cls, value: "str | Modality") -> "Modality":
        if isinstance(value, Modality):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown modality {value!r}; expected one of {[m.value for m in cls]}") from None

    @property
    def tag(self) -> int:
        return list(Modality).index(self)

    @classmethod
    def from_tag(cls, tag: int) -> "Modality":
        return list(Modality)[tag]


ALL_MODALITIES: tuple[Modality, ...] = tuple(Modality)

# Human-readable names used inside prompts.
DISPLAY_NAMES = {
    Modality.IMAGE: "image",
    Modality.VIDEO: "video",
    Modality.AUDIO: "audio",
    Modality.POINT: "point cloud",
    Modality.IMU: "IMU",
    Modality.FMRI: "fMRI",
    Modality.DEPTH: "depth map",
    Modality.NORMAL: "normal map",
}
