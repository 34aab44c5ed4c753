import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from omnialign.config import TokenizerConfig, config_from_dict
from omnialign.data import (
    GRID_SIZE, PROMPT_TEMPLATES, SHAPES, DatasetCache, DatasetManifest, HashMismatchError, ManifestFormatError,
    ManifestItem, SceneSpec, TemplateError, TruncatedManifestError, UnsupportedVersionError, answer_vocabulary,
    build_split, caption_for_scene, caption_prompt, decode_manifest, encode_manifest, generate_manifests,
    generate_scene, load_manifest, manifest_path, option_questions, parse_caption, qa_for_scene, render_modality,
    render_prompt, sample_dialog, split_seeds, write_manifest,
)
from omnialign.data.scenes import render_image
from omnialign.modality import ALL_MODALITIES, Modality
from omnialign.tokenizers import expected_token_count

CFG = TokenizerConfig()
ALL_SPECS = [SceneSpec.from_index(i) for i in range(GRID_SIZE)]


# -- scenes ------------------------------------------------------------------------------


def test_scene_is_deterministic():
    assert generate_scene(17) == generate_scene(17)


def test_seed_zero_golden_scene():
    assert generate_scene(0).attributes() == ("square", "green", "large", 1)


def test_scene_distribution_is_uniform_over_grid():
    counts = collections.Counter(generate_scene(s).index for s in range(54_000))
    assert len(counts) == GRID_SIZE
    assert all(850 <= c <= 1150 for c in counts.values())


def test_grid_index_round_trip():
    assert [s.index for s in ALL_SPECS] == list(range(GRID_SIZE))
    with pytest.raises(ValueError):
        SceneSpec("star", "red", "small", 1)


def test_depth_ignores_color():
    a = SceneSpec("circle", "red", "large", 2, seed=5)
    b = SceneSpec("circle", "blue", "large", 2, seed=5)
    for m in (Modality.DEPTH, Modality.NORMAL):
        assert render_modality(a, m).payload.tobytes() == render_modality(b, m).payload.tobytes()


@pytest.mark.parametrize("modality", ALL_MODALITIES)
def test_render_is_bit_identical_and_tokenizable(modality):
    spec = generate_scene(123)
    a, b = render_modality(spec, modality), render_modality(spec, modality)
    assert a.payload.tobytes() == b.payload.tobytes()
    assert a.payload.dtype == np.float32 and np.isfinite(a.payload).all()
    expected = {
        Modality.IMAGE: (3, 28, 28), Modality.DEPTH: (3, 28, 28), Modality.NORMAL: (3, 28, 28),
        Modality.AUDIO: (1, 32, 64), Modality.POINT: (128, 6), Modality.IMU: (6, 64), Modality.FMRI: (64,),
    }
    if modality is Modality.VIDEO:
        assert a.payload.shape[1:] == (3, 28, 28) and 2 <= a.payload.shape[0] <= 4
    else:
        assert a.payload.shape == expected[modality]
    assert expected_token_count(modality, CFG) >= 1


def test_image_render_is_injective_over_grid():
    renders = [render_image(s, CFG).tobytes() for s in ALL_SPECS]
    assert len(set(renders)) == GRID_SIZE


def test_fmri_projection_is_global():
    a, b = SceneSpec("square", "red", "small", 1, seed=1), SceneSpec("square", "red", "small", 1, seed=2)
    img_a, img_b = render_image(a, CFG), render_image(b, CFG)
    fa, fb = render_modality(a, "fmri").payload, render_modality(b, "fmri").payload
    assert (img_a.tobytes() == img_b.tobytes()) == (fa.tobytes() == fb.tobytes())


@pytest.mark.parametrize("n_renders", [GRID_SIZE, 10 * GRID_SIZE])
def test_logistic_probe_separates_shapes(n_renders):
    # Raw pixels of the grid (and of ten layout draws per grid point) are
    # linearly separable by shape: a logistic probe fits them perfectly.
    specs = [SceneSpec.from_index(i % GRID_SIZE, seed=i) for i in range(n_renders)]
    x = np.stack([render_image(s, CFG).reshape(-1) for s in specs])
    y = [SHAPES.index(s.shape) for s in specs]
    probe = LogisticRegression(max_iter=5000).fit(x, y)
    assert probe.score(x, y) == 1.0


# -- captions and questions -----------------------------------------------------------------


def test_caption_grammar():
    assert caption_for_scene(SceneSpec("circle", "red", "large", 1)) == "a large red circle"
    assert caption_for_scene(SceneSpec("triangle", "blue", "small", 3)) == "three small blue triangles"


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: caption_for_scene(s))
def test_caption_round_trip(spec):
    assert parse_caption(caption_for_scene(spec)) == spec


def test_parse_rejects_broken_captions():
    for bad in ("a large red circles", "two large red circle", "four red circles"):
        with pytest.raises(ValueError):
            parse_caption(bad)


def test_answer_vocabulary_is_closed():
    vocab = answer_vocabulary()
    assert len(vocab) <= 11
    for spec in ALL_SPECS:
        assert all(answer in vocab and " " not in answer for _, answer in qa_for_scene(spec))


def test_qa_pairs():
    qa = dict(qa_for_scene(SceneSpec("square", "green", "small", 2)))
    assert qa["What color is the shape?"] == "green"
    assert qa["How many shapes are there?"] == "two"


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_option_questions_have_one_correct_letter(seed):
    spec = generate_scene(seed)
    gold = dict(qa_for_scene(spec))
    for oq in option_questions(spec):
        assert len(oq.options) == 4 and len(set(oq.options)) == 4
        assert oq.answer == gold[oq.question]
        assert sum(o in answer_vocabulary() and o == gold[oq.question] for o in oq.options) == 1


def test_answer_letter_is_spread():
    letters = collections.Counter(oq.answer_letter for s in range(400) for oq in option_questions(generate_scene(s)))
    assert set(letters) == {"A", "B", "C", "D"}
    assert min(letters.values()) > 0.15 * sum(letters.values())


# -- prompts -------------------------------------------------------------------------------


def test_prompt_templates_are_byte_exact():
    assert render_prompt("caption", {"modal": "image"}) == "Provide a one-sentence caption for the provided image."
    assert render_prompt("open_qa", {"Question": "What color is the shape?"}) == \
        "What color is the shape? Answer the question using a single word or phrase."
    assert render_prompt("option_qa", {"Question": "Q?", "Options": "A. x\nB. y"}) == \
        "Q? A. x\nB. y Answer with the option's letter from the given choices directly"
    assert render_prompt("imu") == "Describe the motion."
    assert render_prompt("fmri") == "Describe this scene based on fMRI data."
    assert render_prompt("region") == "Provide a short description for this region."
    assert len(PROMPT_TEMPLATES) == 6


def test_prompt_errors():
    with pytest.raises(TemplateError):
        render_prompt("caption")
    with pytest.raises(ValueError):
        render_prompt("poem", {})


def test_caption_prompt_per_modality():
    assert caption_prompt("imu") == "Describe the motion."
    assert caption_prompt("fmri") == "Describe this scene based on fMRI data."
    assert caption_prompt("point").startswith("Provide a one-sentence caption for the provided ")


def test_dialogs_are_single_turn_and_deterministic():
    spec = generate_scene(9)
    a = sample_dialog(spec, Modality.AUDIO, np.random.default_rng(3))
    assert a == sample_dialog(spec, Modality.AUDIO, np.random.default_rng(3))
    assert len(a) == 1


# -- manifests -----------------------------------------------------------------------------


def image_manifest(n=10):
    items = [ManifestItem(render_image(generate_scene(s), CFG), caption_for_scene(generate_scene(s)),
                          qa_for_scene(generate_scene(s)), {"seed": s}) for s in range(n)]
    return DatasetManifest(Modality.IMAGE, items)


def test_manifest_round_trip(tmp_path):
    m = image_manifest()
    path = tmp_path / "image.olmf"
    write_manifest(m, path)
    loaded = load_manifest(path)
    assert loaded.items == m.items and loaded.modality is Modality.IMAGE and loaded.split == "train"
    assert encode_manifest(loaded) == path.read_bytes()


def test_manifest_corrupted_payload_names_item():
    data = bytearray(encode_manifest(image_manifest(3)))
    data[-8 - 5] ^= 0xFF  # inside the last payload blob
    with pytest.raises(HashMismatchError) as info:
        decode_manifest(bytes(data))
    assert info.value.item == 2 and "item 2" in str(info.value)


def test_manifest_version_and_magic():
    data = bytearray(encode_manifest(image_manifest(2)))
    data[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(UnsupportedVersionError):
        decode_manifest(bytes(data))
    with pytest.raises(ManifestFormatError):
        decode_manifest(b"XXXX" + bytes(data[4:]))


def test_manifest_truncated():
    data = encode_manifest(image_manifest(2))
    with pytest.raises(TruncatedManifestError):
        decode_manifest(data[:40])


def test_manifest_header_corruption_detected():
    data = bytearray(encode_manifest(image_manifest(2)))
    pos = data.index(b"a ") if b"a " in data else data.index(b"caption")
    data[pos] ^= 0x01
    with pytest.raises((HashMismatchError, ManifestFormatError, ValueError)):
        decode_manifest(bytes(data))


def test_empty_manifest_rejected():
    with pytest.raises(ValueError):
        encode_manifest(DatasetManifest(Modality.IMAGE, []))


# -- datasets ------------------------------------------------------------------------------


def test_train_and_eval_seeds_are_disjoint():
    for m in ALL_MODALITIES:
        assert not set(split_seeds(4, m, "train", 5000)) & set(split_seeds(4, m, "eval", 5000))
    assert not set(split_seeds(4, "image", "train", 100)) & set(split_seeds(4, "audio", "train", 100))
    assert not set(split_seeds(4, "image", "train", 100)) & set(split_seeds(5, "image", "train", 100))


def test_dataset_is_pure_function_of_seed():
    cfg = config_from_dict({"data": {"seed": 2, "train_size": 6}})
    a, b = build_split(cfg, "audio", "train"), build_split(cfg, "audio", "train")
    assert [p.tobytes() for p in a.payloads] == [p.tobytes() for p in b.payloads]
    assert a.captions == [caption_for_scene(s) for s in a.specs]


def test_generated_manifests_are_reproducible(tmp_path):
    cfg = config_from_dict({"data": {"seed": 1, "train_size": 4}})
    first = generate_manifests(cfg, tmp_path / "a")
    second = generate_manifests(cfg, tmp_path / "b")
    assert len(first) == 8
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]


def test_cache_reads_manifests(tmp_path):
    cfg = config_from_dict({"data": {"seed": 1, "train_size": 3}})
    generate_manifests(cfg, tmp_path, modalities=[Modality.POINT])
    from_disk = DatasetCache(cfg, tmp_path).get("point")
    fresh = build_split(cfg, "point", "train")
    assert [x.tobytes() for x in from_disk.inputs] == [x.tobytes() for x in fresh.inputs]
    assert manifest_path(tmp_path, "point").exists()


def test_paired_captions_across_modalities(tmp_path):
    cfg = config_from_dict({"data": {"seed": 0, "train_size": 3}})
    for m in ALL_MODALITIES:
        ds = build_split(cfg, m, "train")
        manifest = ds.to_manifest()
        assert [it.caption for it in manifest.items] == [caption_for_scene(s) for s in ds.specs]
