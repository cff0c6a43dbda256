import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steam_eeg import tensor as T
from steam_eeg.cnn1d import (Branch, BranchConfig, CrossChannelAttention, FeatureExtractor, grid_regions,
                             region_features)
from steam_eeg.errors import ConfigError, RegionError, ShapeError
from steam_eeg.tensor import Tensor, grad_check


def test_identity_kernel_relu():
    branch = Branch(BranchConfig(layers=((1, 3),), pool=1))
    branch.convs[0].weight.data = np.array([[[0.0, 1.0, 0.0]]])
    out = branch.layer_maps(np.array([[[1.0, -2.0, 3.0]]]))[0]
    np.testing.assert_array_equal(out.data[0, 0, 0], [1, 0, 3])


def test_zero_weights_constant_bias(rng):
    branch = Branch(BranchConfig(layers=((4, 3),), pool=1))
    branch.convs[0].weight.data[:] = 0.0
    branch.convs[0].bias.data[:] = 0.5
    out = branch.layer_maps(rng.standard_normal((2, 3, 10)))[0]
    np.testing.assert_array_equal(out.data, 0.5)


def test_same_length_until_pooling(rng):
    branch = Branch(BranchConfig(layers=((4, 5), (6, 3)), pool=1))
    maps = branch.layer_maps(rng.standard_normal((2, 3, 17)))
    assert [m.shape for m in maps] == [(2, 3, 4, 17), (2, 3, 6, 17)]
    pooled = Branch(BranchConfig(layers=((4, 5), (6, 3)), pool=2)).layer_maps(rng.standard_normal((2, 3, 17)))
    assert [m.shape[-1] for m in pooled] == [8, 4]


def test_branch_rejects_short_input(rng):
    with pytest.raises(ShapeError):
        Branch()(rng.standard_normal((1, 1, 5)))


def test_branch_config_validation():
    with pytest.raises(ConfigError):
        BranchConfig(layers=((4, 4),))
    with pytest.raises(ConfigError):
        BranchConfig(layers=())


def test_grad_two_layers_with_attention(rng):
    cfg = BranchConfig(layers=((3, 3), (2, 3)), pool=2, activation="tanh", attention_dim=4)
    branch = Branch(cfg, seed=5)
    x = Tensor(rng.standard_normal((2, 3, 8)))
    params = branch.parameters()
    r = Tensor(rng.standard_normal((2, 3, 2, 2)))

    def loss(x, *ps):
        return (branch(x)[0] * r).sum()

    assert grad_check(loss, [x] + params) <= 1e-4


def test_grad_relu_branch(rng):
    branch = Branch(BranchConfig(layers=((3, 3), (2, 3)), pool=1, attention_dim=4), seed=2)
    x = Tensor(rng.standard_normal((1, 2, 6)))
    r = Tensor(rng.standard_normal((1, 2, 2, 6)))
    assert grad_check(lambda x, *ps: (branch(x)[0] * r).sum(), [x] + branch.parameters()) <= 1e-4


# -- attention ------------------------------------------------------------------
def scalar_attention(h, wh, bh, wa, ba):
    """Loop-by-loop recomputation of the attention weights and attended maps for one sample."""
    c_count, f_count, t_count = h.shape
    scores = []
    for c in range(c_count):
        desc = [sum(h[c, f, t] for t in range(t_count)) / t_count for f in range(f_count)]
        hidden = [math.tanh(sum(desc[f] * wh[f, j] for f in range(f_count)) + bh[j]) for j in range(wh.shape[1])]
        scores.append(sum(hidden[j] * wa[j, 0] for j in range(len(hidden))) + ba[0])
    top = max(scores)
    expo = [math.exp(s - top) for s in scores]
    total = sum(expo)
    a = [e / total for e in expo]
    attended = np.array([[[a[c] * h[c, f, t] for t in range(t_count)] for f in range(f_count)]
                         for c in range(c_count)])
    return np.array(a), attended


def test_attention_matches_scalar_oracle(rng):
    attn = CrossChannelAttention(4, hidden=5, seed=11)
    attn.score.bias.data = np.array([0.3])
    attn.proj.bias.data = rng.standard_normal(5)
    h = rng.standard_normal((2, 3, 4, 6))
    a, attended = attn(Tensor(h))
    for b in range(2):
        ref_a, ref_h = scalar_attention(h[b], attn.proj.weight.data, attn.proj.bias.data,
                                        attn.score.weight.data, attn.score.bias.data)
        np.testing.assert_allclose(a.data[b], ref_a, atol=1e-12, rtol=0)
        np.testing.assert_allclose(attended.data[b], ref_h, atol=1e-12, rtol=0)


def test_attention_single_channel(rng):
    h = rng.standard_normal((2, 1, 4, 5))
    a, attended = CrossChannelAttention(4, seed=1)(Tensor(h))
    np.testing.assert_array_equal(a.data, 1.0)
    np.testing.assert_array_equal(attended.data, h)


def test_attention_identical_channels_uniform(rng):
    h = np.repeat(rng.standard_normal((1, 1, 4, 5)), 3, axis=1)
    a, _ = CrossChannelAttention(4, seed=1)(Tensor(h))
    np.testing.assert_allclose(a.data, 1 / 3, atol=1e-15)


def test_attention_permutation_equivariant(rng):
    attn = CrossChannelAttention(4, seed=3)
    h = rng.standard_normal((1, 5, 4, 6))
    perm = rng.permutation(5)
    a, out = attn(Tensor(h))
    a_p, out_p = attn(Tensor(h[:, perm]))
    np.testing.assert_allclose(a_p.data, a.data[:, perm], atol=1e-15)
    np.testing.assert_allclose(out_p.data, out.data[:, perm], atol=1e-15)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.integers(0, 10 ** 6),
       st.floats(0.01, 100.0))
def test_attention_weights_normalised(channels, features, length, seed, scale):
    rng = np.random.default_rng(seed)
    h = scale * rng.standard_normal((2, channels, features, length))
    a, attended = CrossChannelAttention(features, hidden=3, seed=seed)(Tensor(h))
    assert np.all(a.data >= 0)
    np.testing.assert_allclose(a.data.sum(axis=1), 1.0, atol=1e-12)
    assert attended.shape == h.shape


def test_attention_shape_error(rng):
    with pytest.raises(ShapeError):
        CrossChannelAttention(4)(Tensor(rng.standard_normal((2, 4, 5))))


def test_attention_disabled_is_identity(rng):
    attn = CrossChannelAttention(4)
    attn.enabled = False
    h = rng.standard_normal((1, 3, 4, 5))
    a, out = attn(Tensor(h))
    np.testing.assert_allclose(a.data, 1 / 3)
    np.testing.assert_array_equal(out.data, h)


# -- extractor and regions ----------------------------------------------------------
def test_extractor_shapes(rng):
    fe = FeatureExtractor(seed=0)
    maps, pooled, weights = fe(rng.standard_normal((4, 3, 2, 64)))
    assert [m.shape for m in maps] == [(4, 2, 32, 16)] * 3
    assert pooled.shape == (4, 96)
    assert fe.feature_dim == 96
    assert len(weights) == 3 and weights[0][0].shape == (4, 2)


def test_extractor_branches_are_independent():
    fe = FeatureExtractor(seed=0)
    w = [b.convs[0].weight.data for b in fe.branches]
    assert not np.array_equal(w[0], w[1]) and not np.array_equal(w[1], w[2])


def test_extractor_rejects_wrong_component_count(rng):
    with pytest.raises(ShapeError):
        FeatureExtractor()(rng.standard_normal((1, 2, 1, 32)))


def test_region_constant_maps():
    maps = [np.full((2, 3, 4, 8), 1.5), np.full((2, 3, 2, 8), 1.5)]
    feats = region_features(maps, grid_regions(3, 8, 4))
    assert feats.shape == (2, 12, 6)
    np.testing.assert_array_equal(feats, 1.5)


def test_region_single_covering(rng):
    maps = [rng.standard_normal((2, 3, 4, 8)) for _ in range(3)]
    feats = region_features(maps, [((0, 1, 2), 0, 8)])
    expected = np.concatenate([m.mean(axis=(1, 3)) for m in maps], axis=1)
    np.testing.assert_allclose(feats[:, 0], expected, atol=1e-15)


def test_region_two_halves():
    m = np.zeros((1, 1, 2, 10))
    m[..., 5:] = 1.0
    feats = region_features([m], grid_regions(1, 10, 2))
    np.testing.assert_array_equal(feats[0, 0], [0, 0])
    np.testing.assert_array_equal(feats[0, 1], [1, 1])


def test_region_errors():
    with pytest.raises(RegionError):
        region_features([np.zeros((1, 1, 2, 4))], [((0,), 2, 2)])
    with pytest.raises(RegionError):
        region_features([np.zeros((1, 1, 2, 4))], [((), 0, 2)])
    with pytest.raises(RegionError):
        grid_regions(2, 3, 8)


def test_grid_regions_partition():
    regions = grid_regions(2, 13, 4)
    assert len(regions) == 8
    for c in range(2):
        spans = [(s, e) for ch, s, e in regions if ch == (c,)]
        assert spans[0][0] == 0 and spans[-1][1] == 13
        assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))


def test_region_features_accept_tensors(rng):
    m = rng.standard_normal((1, 2, 3, 8))
    np.testing.assert_array_equal(region_features([Tensor(m)], grid_regions(2, 8, 2)),
                                  region_features([m], grid_regions(2, 8, 2)))
