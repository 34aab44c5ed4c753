"""Desk-scale multimodal-to-language alignment: tokenizers, a frozen encoder, routed projection experts and a
small causal decoder, with staged alignment and instruction tuning on synthetic paired data."""

from .config import RunConfig, load_config
from .model import OmniModel
from .modality import ALL_MODALITIES, Modality

__version__ = "0.1.0"

__all__ = ["ALL_MODALITIES", "Modality", "OmniModel", "RunConfig", "load_config"]
