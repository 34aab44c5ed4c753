import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnialign.encoder import EncodedFeatures
from omnialign.errors import ConfigurationError
from omnialign.modality import ALL_MODALITIES, Modality
from omnialign.numerics import Parameter, Tensor, gradcheck, ops
from omnialign.upm import (
    ProjectionExpert, RouterType, UniversalProjection, combine_experts, init_experts_from_image,
)

D, N = 8, 3


def make_upm(k=3, seed=0, dtype=np.float64, **kw):
    return UniversalProjection(D, N, k, depth=1, heads=2, rng=np.random.default_rng(seed), dtype=dtype, **kw)


def feats(rng, length=5, batch=()):
    return Tensor(rng.standard_normal((*batch, length, D)))


def test_zero_router_gives_uniform_rows(rng):
    upm = make_upm()
    for p in upm.routers["audio"].parameters():
        p.data[...] = 0
    w = upm(Modality.AUDIO, feats(rng)).routing_weights.data
    np.testing.assert_allclose(w, np.full((N, 3), 1 / 3), atol=1e-15)


def test_router_softmax_example():
    upm = make_upm()
    mlp = upm.routers["image"].mlp
    for p in mlp.parameters():
        p.data[...] = 0
    mlp.fc2.bias.data[:] = [1.0, 2.0, 3.0]
    joint = upm.joint("image", Tensor(np.zeros((2, D))))
    np.testing.assert_allclose(upm.route("image", joint).data, [[0.0900, 0.2447, 0.6652]] * N, atol=1e-4)


def test_route_unknown_modality():
    upm = make_upm(modalities=[Modality.IMAGE])
    with pytest.raises(ConfigurationError):
        upm(Modality.AUDIO, Tensor(np.zeros((2, D))))


def test_width_mismatch(rng):
    with pytest.raises(ConfigurationError):
        make_upm()(Modality.IMAGE, Tensor(np.zeros((4, D + 1))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(ALL_MODALITIES))
def test_soft_rows_normalised_and_output_in_convex_hull(seed, modality):
    r = np.random.default_rng(seed)
    upm = make_upm(seed=seed % 7)
    x = feats(r, int(r.integers(1, 9)))
    out = upm(modality, x)
    w = out.routing_weights.data
    assert np.all((w >= 0) & (w <= 1))
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)
    joint = upm.joint(modality, x)
    experts = np.stack([e(joint).data[:N] for e in upm.experts])
    assert np.all(out.q_bar.data >= experts.min(0) - 1e-6)
    assert np.all(out.q_bar.data <= experts.max(0) + 1e-6)


def test_single_expert_equals_its_output(rng):
    upm = make_upm(k=1)
    x = feats(rng)
    out = upm(Modality.IMAGE, x).q_bar.data
    assert out.tobytes() == upm.experts[0](upm.joint(Modality.IMAGE, x)).data[:N].tobytes()


def test_identical_experts_ignore_router(rng):
    upm = make_upm()
    upm.experts = [copy.deepcopy(upm.experts[0]) for _ in range(3)]
    x = feats(rng)
    a = upm(Modality.VIDEO, x).q_bar.data
    for p in upm.routers["video"].parameters():
        p.data[...] = rng.standard_normal(p.shape)
    np.testing.assert_allclose(upm(Modality.VIDEO, x).q_bar.data, a, atol=1e-12)


@pytest.mark.parametrize("length", [1, 7, 64, 256])
def test_fixed_number_of_output_tokens(rng, length):
    upm = make_upm(dtype=np.float32)
    for m in ALL_MODALITIES:
        out = upm(m, Tensor(rng.standard_normal((length, D)).astype(np.float32)))
        assert out.q_bar.shape == (N, D)
        assert out.routing_weights.shape == (N, 3)


def test_accepts_encoded_features(rng):
    x = feats(rng)
    upm = make_upm()
    a = upm(Modality.IMAGE, EncodedFeatures(Modality.IMAGE, x)).q_bar.data
    assert a.tobytes() == upm(Modality.IMAGE, x).q_bar.data.tobytes()


# -- combine_experts ---------------------------------------------------------------------


def test_constant_is_plain_mean(rng):
    a, b = Tensor(rng.standard_normal((N, D))), Tensor(rng.standard_normal((N, D)))
    w = Tensor(rng.random((N, 2)))
    out, eff = combine_experts([a, b], w, "constant")
    np.testing.assert_allclose(out.data, (a.data + b.data) / 2, atol=1e-12)
    np.testing.assert_array_equal(eff.data, 0.5)


def test_sparse_keeps_scaled_winner(rng):
    outs = [Tensor(rng.standard_normal((1, D))) for _ in range(3)]
    out, _ = combine_experts(outs, Tensor(np.array([[0.2, 0.5, 0.3]])), "sparse")
    np.testing.assert_array_equal(out.data, 0.5 * outs[1].data)


def test_sparse_ties_go_to_lower_index(rng):
    outs = [Tensor(rng.standard_normal((1, D))) for _ in range(3)]
    out, eff = combine_experts(outs, Tensor(np.array([[0.4, 0.4, 0.2]])), "sparse")
    np.testing.assert_array_equal(eff.data, [[0.4, 0.0, 0.0]])


def test_soft_one_hot_selects_expert(rng):
    outs = [Tensor(rng.standard_normal((2, D))) for _ in range(3)]
    out, _ = combine_experts(outs, Tensor(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])), "soft")
    np.testing.assert_allclose(out.data[0], outs[2].data[0], atol=1e-12)
    np.testing.assert_allclose(out.data[1], outs[0].data[1], atol=1e-12)


def test_sparse_and_soft_agree_on_saturated_logits(rng):
    outs = [Tensor(rng.standard_normal((N, D))) for _ in range(3)]
    logits = np.zeros((N, 3))
    logits[np.arange(N), rng.integers(3, size=N)] = 60.0
    w = ops.softmax(Tensor(logits))
    soft, _ = combine_experts(outs, w, RouterType.SOFT)
    sparse, _ = combine_experts(outs, w, RouterType.SPARSE)
    np.testing.assert_allclose(soft.data, sparse.data, atol=1e-6)


def test_combine_rejects_mismatched_weights(rng):
    with pytest.raises(ConfigurationError):
        combine_experts([Tensor(np.zeros((N, D)))] * 2, Tensor(np.zeros((N, 3))), "soft")


def test_constant_router_ignores_router_parameters(rng):
    upm = make_upm(router_type="constant")
    x = feats(rng)
    a = upm(Modality.AUDIO, x).q_bar.data.tobytes()
    for p in upm.routers["audio"].parameters():
        p.data[...] = rng.standard_normal(p.shape)
    assert upm(Modality.AUDIO, x).q_bar.data.tobytes() == a


# -- expert initialisation ---------------------------------------------------------------


def test_init_from_image_copies(rng):
    expert = ProjectionExpert(D, 1, 2, rng, np.float64)
    experts = init_experts_from_image(expert, 4)
    x = Tensor(rng.standard_normal((5, D)))
    outs = {e(x).data.tobytes() for e in experts}
    assert len(outs) == 1
    experts[0].blocks[0].fc1.weight.data += 1.0
    assert not np.array_equal(experts[0].blocks[0].fc1.weight.data, experts[1].blocks[0].fc1.weight.data)
    with pytest.raises(ValueError):
        init_experts_from_image(expert, 0)


def test_expanded_soft_projection_equals_image_expert(rng):
    single = make_upm(k=1)
    expanded = single.expand(3, "image", np.random.default_rng(5))
    x = feats(rng)
    ref = single(Modality.IMAGE, x).q_bar.data
    np.testing.assert_allclose(expanded(Modality.IMAGE, x).q_bar.data, ref, atol=1e-12)
    assert expanded.n_experts == 3


def test_random_init_experts_differ(rng):
    expanded = make_upm(k=1).expand(3, "random", np.random.default_rng(5))
    joint = expanded.joint(Modality.IMAGE, feats(rng))
    outs = [e(joint).data for e in expanded.experts]
    assert min(np.abs(outs[i] - outs[j]).max() for i in range(3) for j in range(i + 1, 3)) > 1e-3


def test_expand_keeps_only_image_modality_tokens():
    single = make_upm(k=1)
    expanded = single.expand(2, "image", np.random.default_rng(1))
    np.testing.assert_array_equal(expanded.modality_tokens["image"].data, single.modality_tokens["image"].data)
    assert not np.array_equal(expanded.modality_tokens["audio"].data, single.modality_tokens["audio"].data)


# -- gradients ---------------------------------------------------------------------------


@pytest.mark.parametrize("router_type", ["soft", "sparse", "constant"])
def test_upm_gradcheck(rng, router_type):
    upm = make_upm(k=2)
    x = Parameter(rng.standard_normal((4, D)))
    params = [x, upm.modality_tokens["point"]] + upm.routers["point"].parameters() + \
        [p for e in upm.experts for p in e.parameters()]

    def f():
        return ops.sum(ops.gelu(upm(Modality.POINT, x, router_type).q_bar))

    assert gradcheck(f, params, max_coords=10) < 1e-5
    f().backward()
    assert np.abs(upm.modality_tokens["point"].grad).sum() > 0
    router_grads = [p.grad for p in upm.routers["point"].parameters()]
    if router_type == "constant":
        assert all(g is None for g in router_grads)
    else:
        assert all(g is not None and np.abs(g).sum() > 0 for g in router_grads)
