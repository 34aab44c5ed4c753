"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line in the session summary.

The training-based criteria run at the reference desk configuration (``configs/desk.yaml``).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from omnialign.checkpoint import load_checkpoint, save_checkpoint
from omnialign.cli import main
from omnialign.config import config_from_dict, load_config
from omnialign.data import DatasetCache, render_prompt
from omnialign.encoder import EncodedFeatures, average_video_frames
from omnialign.modality import ALL_MODALITIES, Modality
from omnialign.model import OmniModel
from omnialign.numerics import AdamW, Tensor, gradcheck, no_grad
from omnialign.pipeline import component_hashes, stage_plan, train_alignment_stage, train_instruction
from omnialign.pipeline.ablation import AblationRunner, axis_variants, run_ablation
from omnialign.pipeline.stages import replay_echo, run_stage
from omnialign.tokenizers import AudioTokenizer, FMRITokenizer, IMUTokenizer, PointTokenizer, VisualTokenizer
from omnialign.upm import combine_experts

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


def desk_config(**overrides):
    raw = load_config(DESK).to_dict()
    for key, value in overrides.items():
        raw[key] = {**raw.get(key, {}), **value}
    return config_from_dict(raw)


def conv_len(n, k, s):
    # Independent oracle for a valid (unpadded) convolution.
    return (n - k) // s + 1


@pytest.fixture(scope="module")
def desk_upm():
    model = OmniModel(desk_config().model)
    return model.upm


@pytest.fixture(scope="module")
def stage_one(tmp_path_factory):
    """Stage I at the desk configuration, shared by the learnability and replay criteria."""
    cfg = desk_config()
    run_dir = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    report = run_stage(cfg, "I", run_dir)
    return cfg, report, time.perf_counter() - start


# -- 1-3: routing and the projection contract --------------------------------------------


@pytest.mark.criterion(1, "soft routing rows are normalised over 1000 inputs per modality")
def test_routing_normalisation(desk_upm, record_property):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for m in ALL_MODALITIES:
        x = Tensor(rng.standard_normal((1000, 8, desk_upm.width)).astype(np.float32))
        with no_grad():
            # The weights the soft router mixes with, without running the experts.
            w = desk_upm.route(m, desk_upm.joint(m, x)).data.astype(np.float64)
        assert w.shape == (1000, desk_upm.n_tokens, desk_upm.n_experts)
        assert np.all((w >= 0) & (w <= 1))
        worst = max(worst, float(np.abs(w.sum(-1) - 1).max()))
    elapsed = time.perf_counter() - start
    record_property("max_row_error", f"{worst:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert worst <= 1e-6
    assert elapsed < 10


@pytest.mark.criterion(2, "constant, sparse and soft router algebra")
def test_router_algebra(desk_upm, record_property):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    errors = {"constant": 0.0, "soft_one_hot": 0.0}
    for m in ALL_MODALITIES:
        x = Tensor(rng.standard_normal((16, 8, desk_upm.width)).astype(np.float32))
        with no_grad():
            joint = desk_upm.joint(m, x)
            experts = np.stack([e(joint).data[..., :desk_upm.n_tokens, :] for e in desk_upm.experts])
            const = desk_upm(m, x, "constant").q_bar.data
            errors["constant"] = max(errors["constant"], float(np.abs(const - experts.mean(0)).max()))

            w = desk_upm.route(m, joint).data
            sparse = desk_upm(m, x, "sparse").q_bar.data
            k_star = np.argmax(w, axis=-1)
            pick = np.take_along_axis(experts, k_star[None, ..., None], axis=0)[0]
            w_star = np.take_along_axis(w, k_star[..., None], axis=-1)
            assert np.array_equal(sparse, (w_star * pick).astype(np.float32))

            one_hot = (np.arange(desk_upm.n_experts) == rng.integers(desk_upm.n_experts, size=w.shape[:-1])[..., None])
            soft, _ = combine_experts([Tensor(e) for e in experts], Tensor(one_hot.astype(np.float32)), "soft")
            chosen = np.take_along_axis(experts, one_hot.argmax(-1)[None, ..., None], axis=0)[0]
            errors["soft_one_hot"] = max(errors["soft_one_hot"], float(np.abs(soft.data - chosen).max()))
    elapsed = time.perf_counter() - start
    for k, v in errors.items():
        record_property(k, f"{v:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert errors["constant"] <= 1e-6 and errors["soft_one_hot"] <= 1e-6
    assert elapsed < 30


@pytest.mark.criterion(3, "the projection emits exactly N tokens for every modality and length")
def test_fixed_length(desk_upm, record_property):
    rng = np.random.default_rng(3)
    for m in ALL_MODALITIES:
        for length in (1, 7, 64, 256):
            x = Tensor(rng.standard_normal((length, desk_upm.width)).astype(np.float32))
            with no_grad():
                out = desk_upm(m, EncodedFeatures(m, x))
            assert out.q_bar.shape == (desk_upm.n_tokens, desk_upm.width)
    record_property("N", desk_upm.n_tokens)


# -- 4: gradients --------------------------------------------------------------------------


@pytest.mark.criterion(4, "f64 gradient check through tokenizer, encoder, projection and decoder")
def test_composite_gradcheck(record_property):
    cfg = desk_config(model={"dtype": "float64"})
    model = OmniModel(cfg.model)
    ds = DatasetCache(cfg).get(Modality.AUDIO, "eval", size=1)
    start = time.perf_counter()

    def f():
        return model.alignment_loss(Modality.AUDIO, ds.inputs, ds.captions)

    upm = model.upm
    groups = {
        "tokenizer": model.tokenizers.audio.parameters(),
        "modality_tokens": [upm.modality_tokens["audio"]],
        "router": upm.routers["audio"].parameters(),
        "experts": [p for e in upm.experts for p in e.parameters()],
        "adapter": model.adapter.parameters(),
        "decoder": model.decoder.parameters()[:6],
    }
    worst = {}
    for name, params in groups.items():
        worst[name] = gradcheck(f, params, max_coords=4)
    # The encoder is frozen; its input gradient is exercised by every tokenizer coordinate above.
    f().backward()
    assert np.abs(upm.modality_tokens["audio"].grad).sum() > 0
    assert all(p.grad is not None and np.abs(p.grad).sum() > 0 for p in upm.routers["audio"].parameters())
    assert all(p.grad is None for p in model.encoder.parameters())
    elapsed = time.perf_counter() - start
    record_property("max_rel_err", f"{max(worst.values()):.2e}")
    record_property("seconds", f"{elapsed:.0f}")
    assert max(worst.values()) < 1e-5
    assert elapsed < 300


# -- 5: freezing -----------------------------------------------------------------------------


@pytest.mark.criterion(5, "frozen components keep their hashes over 500-step alignment and instruction runs")
def test_freezing_ledger(record_property):
    cfg = desk_config(stages={"II": {"steps": 500, "warmup": 25}, "instruct": {"steps": 500, "warmup": 25}})
    cache = DatasetCache(cfg)
    model = OmniModel(cfg.model)

    start = time.perf_counter()
    plan = stage_plan("II", cfg)
    before = component_hashes(model)
    train_alignment_stage(plan, model, cache.all(plan.modalities), cfg, seed=5, save=False)
    after = component_hashes(model)
    align_s = time.perf_counter() - start
    assert after["encoder"] == before["encoder"] and after["decoder"] == before["decoder"]
    assert after["upm"] != before["upm"]

    start = time.perf_counter()
    plan = stage_plan("instruct", cfg)
    train_instruction(model, cache.all(plan.modalities), cfg, seed=5, plan=plan, save=False)
    final = component_hashes(model)
    instruct_s = time.perf_counter() - start
    assert all(final[c] == after[c] for c in final if c != "decoder")
    assert final["decoder"] != after["decoder"]
    record_property("alignment_s", f"{align_s:.0f}")
    record_property("instruction_s", f"{instruct_s:.0f}")
    assert align_s < 600 and instruct_s < 600


# -- 6: expert initialisation ----------------------------------------------------------------


@pytest.mark.criterion(6, "image-initialised experts reproduce the single image expert")
def test_expert_init_equivalence(record_property):
    cfg = desk_config()
    model = OmniModel(cfg.model, n_experts=1)
    rng = np.random.default_rng(6)
    # Move the stage-I expert away from its initialisation so the copies are non-trivial.
    for p in model.upm.parameters():
        p.data += (0.05 * rng.standard_normal(p.shape)).astype(p.dtype)
    x = Tensor(rng.standard_normal((100, 8, cfg.model.width)).astype(np.float32))
    with no_grad():
        single = model.project(Modality.IMAGE, x).q_bar.data
        model.expand_experts(cfg.model.num_experts, "image", seed=6)
        expanded = model.project(Modality.IMAGE, x, "soft").q_bar.data
    err = float(np.abs(expanded - single).max())
    record_property("max_abs_err", f"{err:.2e}")
    assert model.n_experts == cfg.model.num_experts
    assert err <= 1e-6


# -- 7-8: desk training echoes -----------------------------------------------------------------


@pytest.mark.criterion(7, "stage-I image captioning reaches exact-match >= 0.9 on held-out seeds")
def test_stage_one_learnability(stage_one, record_property):
    cfg, report, elapsed = stage_one
    em = report.metrics["per_modality"]["image"]["caption-exact-match"]
    record_property("exact_match", f"{em:.3f}")
    record_property("steps", cfg.stages.I.steps)
    record_property("seconds", f"{elapsed:.0f}")
    assert cfg.stages.I.steps <= 5000
    assert em >= 0.9
    assert elapsed < 600


@pytest.mark.criterion(8, "stage II with replay keeps image validation loss at or below no replay")
def test_replay_echo(stage_one, tmp_path, record_property):
    cfg, report, _ = stage_one
    start = time.perf_counter()
    result = replay_echo(cfg, report.checkpoint, out=tmp_path)
    elapsed = time.perf_counter() - start
    with_r = result["with_replay"]["image_val_loss"]
    without = result["without_replay"]["image_val_loss"]
    record_property("with_replay", f"{with_r:.4f}")
    record_property("without_replay", f"{without:.4f}")
    record_property("seconds", f"{elapsed:.0f}")
    saved = json.loads((tmp_path / "replay_echo.json").read_text())
    assert saved["with_replay"]["image_val_loss"] == with_r and saved["without_replay"]["image_val_loss"] == without
    assert with_r <= without
    assert elapsed < 1200


# -- 9-10: ablation harness --------------------------------------------------------------------


@pytest.fixture(scope="module")
def ablation_runner():
    return AblationRunner(desk_config())


@pytest.mark.criterion(9, "ablate --axis mode reports both modes per modality, deterministically")
def test_mode_ablation(tmp_path, record_property):
    args = ["ablate", "--axis", "mode", "--config", str(DESK)]
    start = time.perf_counter()
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    elapsed = time.perf_counter() - start
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    first = json.loads((tmp_path / "a" / "ablation_mode.json").read_text())
    second = json.loads((tmp_path / "b" / "ablation_mode.json").read_text())
    assert [r["setting"] for r in first["rows"]] == ["separate", "joint"]
    for row in first["rows"]:
        assert set(row["per_modality"]) == set(first["modalities"])
        for metrics in row["per_modality"].values():
            assert {"caption-exact-match", "qa-token-accuracy", "perplexity"} <= set(metrics)
    assert f"data seed: {first['seed']}" in (tmp_path / "a" / "ablation_mode.txt").read_text()
    assert first == second
    record_property("seconds_per_sweep", f"{elapsed:.0f}")


@pytest.mark.criterion(10, "experts, router, init and encoder sweeps complete deterministically")
def test_ablation_sweeps(ablation_runner, record_property):
    cfg = ablation_runner.cfg
    expected = {"experts": ["K=1", "K=3", "K=5", "K=7"], "router": ["constant", "sparse", "soft"],
                "init": ["random", "image"], "encoder": ["frozen", "trainable"]}
    start = time.perf_counter()
    tables = {}
    for axis, labels in expected.items():
        table = run_ablation(cfg, axis, runner=ablation_runner)
        assert [r["setting"] for r in table.rows] == labels
        assert table.seed == cfg.data.seed
        assert f"data seed: {cfg.data.seed}" in table.render()
        tables[axis] = table
    elapsed = time.perf_counter() - start
    # Determinism: a fresh runner rebuilds one row of the router sweep bit-for-bit.
    fresh = AblationRunner(cfg)
    sparse = next(v for v in axis_variants("router", cfg) if v.label == "sparse")
    assert fresh.run_variant(sparse) == tables["router"].rows[1]
    record_property("sweep_minutes", f"{elapsed / 60:.1f}")
    assert elapsed < 3600


# -- 11-12: shapes and prompts -----------------------------------------------------------------


@pytest.mark.criterion(11, "full-scale tokenizer token counts match the convolution oracle")
def test_tokenizer_shape_table(record_property):
    rng = np.random.default_rng(11)
    d = 8
    image = VisualTokenizer(d, 14, rng)(rng.random((3, 224, 224)).astype(np.float32))
    assert image.shape == (conv_len(224, 14, 14) ** 2, d) == (256, d)
    audio = AudioTokenizer(d, (16, 16), (10, 10), rng)(rng.random((1, 128, 1024)).astype(np.float32))
    assert audio.shape == (conv_len(128, 16, 10) * conv_len(1024, 16, 10), d) == (1212, d)
    point = PointTokenizer(d, 8192, 512, 32, rng)(rng.random((8192, 6)).astype(np.float32))
    assert point.shape == (512, d)
    imu = IMUTokenizer(d, 10, rng)(rng.random((6, 2000)).astype(np.float32))
    assert imu.shape == (conv_len(2000, 10, 1), d) == (1991, d)
    fmri = FMRITokenizer(64, 15724, 8, rng)
    vec = rng.random(15724).astype(np.float32)
    out = fmri(vec).data
    flat = fmri.weight.data[:, :, 0].astype(np.float64) @ vec
    assert out.shape == (8, 64)
    np.testing.assert_allclose(out, flat.reshape(64, 8).T, rtol=1e-4, atol=1e-4)
    record_property("tokens", "image 256, audio 1212, point 512, imu 1991, fmri 8")


@pytest.mark.criterion(12, "rendered prompts are byte-exact")
def test_prompt_bytes():
    expected = {
        ("caption", "image"): b"Provide a one-sentence caption for the provided image.",
        ("open_qa", None): b"What is it? Answer the question using a single word or phrase.",
        ("option_qa", None): b"What is it? A. cat\nB. dog Answer with the option's letter from the given choices "
                             b"directly",
        ("imu", None): b"Describe the motion.",
        ("fmri", None): b"Describe this scene based on fMRI data.",
    }
    fields = {"caption": {"modal": "image"}, "open_qa": {"Question": "What is it?"},
              "option_qa": {"Question": "What is it?", "Options": "A. cat\nB. dog"}}
    for (name, _), want in expected.items():
        assert render_prompt(name, fields.get(name, {})).encode("utf-8") == want


# -- 13: checkpoints ---------------------------------------------------------------------------


@pytest.mark.criterion(13, "checkpoint round trip is byte-identical and resume reproduces 100 steps")
def test_checkpoint_round_trip(tmp_path, record_property):
    cfg = desk_config(stages={"I": {"steps": 100, "warmup": 10}})
    cache = DatasetCache(cfg)
    plan = stage_plan("I", cfg)
    datasets = cache.all(plan.modalities)

    straight = OmniModel(cfg.model, n_experts=1)
    full = train_alignment_stage(plan, straight, datasets, cfg, seed=13, save=False)

    first = OmniModel(cfg.model, n_experts=1)
    part = train_alignment_stage(plan, first, datasets, cfg, seed=13, run_dir=tmp_path, stop_at=50)
    resumed = OmniModel(desk_config(model={"init_seed": 77}).model, n_experts=1)
    opt = AdamW(resumed.named_parameters(), lr=cfg.stages.I.lr, weight_decay=cfg.stages.I.weight_decay)
    state = load_checkpoint(part.checkpoint, resumed, opt)
    again = save_checkpoint(resumed, state, tmp_path / "again.olmc", opt)
    assert again.read_bytes() == Path(part.checkpoint).read_bytes()
    rest = train_alignment_stage(plan, resumed, datasets, cfg, seed=13, state=state, optimizer=opt, save=False)

    joined = part.losses + rest.losses
    assert len(full.losses) == len(joined) == 100
    assert [np.float64(x).tobytes() for x in full.losses] == [np.float64(x).tobytes() for x in joined]
    assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(straight.parameters(), resumed.parameters()))
    record_property("steps", len(joined))


# -- 14: video averaging -----------------------------------------------------------------------


@pytest.mark.criterion(14, "token-wise frame averaging")
def test_video_averaging(record_property):
    rng = np.random.default_rng(14)
    frame = rng.standard_normal((4, 64)).astype(np.float32)
    same = average_video_frames([EncodedFeatures(Modality.VIDEO, Tensor(frame)) for _ in range(8)]).features.data
    identical_err = float(np.abs(same - frame).max())
    frames = rng.standard_normal((8, 4, 64)).astype(np.float32)
    a = average_video_frames([EncodedFeatures(Modality.VIDEO, Tensor(f)) for f in frames]).features.data
    b = average_video_frames([EncodedFeatures(Modality.VIDEO, Tensor(f))
                              for f in frames[rng.permutation(8)]]).features.data
    perm_err = float(np.abs(a - b).max())

    model = OmniModel(desk_config().model)
    clip = rng.random((1, 3, 28, 28)).astype(np.float32)
    with no_grad():
        one = model.features(Modality.VIDEO, [clip]).data
        many = model.features(Modality.VIDEO, [np.repeat(clip, 4, axis=0)]).data
    model_err = float(np.abs(one - many).max())
    record_property("identical_err", f"{identical_err:.1e}")
    record_property("permutation_err", f"{perm_err:.1e}")
    assert identical_err <= 1e-6 and perm_err < 1e-6 and model_err <= 1e-6
