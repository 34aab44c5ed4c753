from .datasets import (
    DatasetCache, ModalityDataset, build_dataset, build_split, generate_manifests, instruction_turn,
    manifest_path, sample_dialog, split_seeds,
)
from .manifest import (
    DatasetManifest, HashMismatchError, ManifestError, ManifestFormatError, ManifestItem,
    TruncatedManifestError, UnsupportedVersionError, decode_manifest, encode_manifest, load_manifest,
    manifest_digest, write_manifest,
)
from .scenes import COLORS, COUNTS, GRID_SIZE, SHAPES, SIZES, SceneSpec, generate_scene, render_modality
from .text import (
    PROMPT_TEMPLATES, TemplateError, answer_vocabulary, caption_for_scene, caption_prompt, option_questions,
    parse_caption, qa_for_scene, render_prompt,
)

__all__ = [
    "COLORS", "COUNTS", "DatasetCache", "DatasetManifest", "GRID_SIZE", "HashMismatchError", "ManifestError",
    "ManifestFormatError", "ManifestItem", "ModalityDataset", "PROMPT_TEMPLATES", "SHAPES", "SIZES", "SceneSpec",
    "TemplateError", "TruncatedManifestError", "UnsupportedVersionError", "answer_vocabulary", "build_dataset",
    "build_split", "caption_for_scene", "caption_prompt", "decode_manifest", "encode_manifest", "generate_manifests", "generate_scene",
    "instruction_turn", "load_manifest", "manifest_digest", "manifest_path", "option_questions", "parse_caption", "qa_for_scene",
    "render_modality", "render_prompt", "sample_dialog", "split_seeds", "write_manifest",
]
