import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steam_eeg.errors import CapacityError, ConfigError, ShapeError
from steam_eeg.mtf import (MtfConfig, MtfGraph, MtfImage, MtfStage, belief_propagation, belief_propagation_batch,
                           brute_force_marginals, build_region_graph, interpolation_weights,
                           joint_log_prob_unnormalized, pairwise_energy, render_topographic_image, state_levels,
                           unary_potentials, unary_table)


def random_tree(rng, m):
    edges = [(int(rng.integers(0, i)), i) for i in range(1, m)]
    return np.array(edges, dtype=int).reshape(-1, 2)


def test_state_levels():
    np.testing.assert_allclose(state_levels(5), [-1, -0.5, 0, 0.5, 1])
    with pytest.raises(ConfigError):
        state_levels(1)


# -- graph construction ----------------------------------------------------------
def test_chain_graph():
    g = build_region_graph(1, 4)
    assert g.node_count == 4 and len(g.edges) == 3 and g.is_tree()


def test_square_graph():
    g = build_region_graph(2, 2)
    assert g.node_count == 4 and len(g.edges) == 4 and not g.is_tree()


@pytest.mark.parametrize("c,t", [(3, 3), (2, 8), (4, 1), (5, 7)])
def test_grid_edge_count(c, t):
    g = build_region_graph(c, t)
    assert len(g.edges) == c * (t - 1) + t * (c - 1)
    assert g.is_connected()


def test_chain_topology_option():
    g = build_region_graph(3, 4, topology="chain")
    assert len(g.edges) == 11 and g.is_tree()


def test_graph_validation():
    with pytest.raises(ConfigError):
        MtfGraph(1, 2, [(0, 0)], 2)
    with pytest.raises(ConfigError):
        MtfGraph(1, 3, [(0, 1), (1, 0)], 2)
    with pytest.raises(ConfigError):
        MtfGraph(1, 2, [(0, 1)], 2, pairwise_beta=-1.0)
    with pytest.raises(ShapeError):
        MtfGraph(1, 2, [(0, 1)], 2, unary=np.zeros((3, 2)))


# -- potentials -------------------------------------------------------------------
def test_zero_weights_give_uniform():
    g = build_region_graph(2, 2, state_count=3)
    g = unary_potentials(np.ones((4, 5)), np.zeros((3, 5)), g)
    np.testing.assert_array_equal(g.unary, 0.0)
    np.testing.assert_allclose(brute_force_marginals(g).marginals, 1 / 3)


def test_unary_sign():
    g = build_region_graph(1, 1, state_count=2)
    g = unary_potentials(np.array([[1.0]]), np.array([[0.0], [2.0]]), g)
    np.testing.assert_array_equal(g.unary, [[0.0, -2.0]])
    assert belief_propagation(g).marginals[0, 1] > 0.5


def test_unary_matches_scalar_loop(rng):
    m, s, d = 5, 4, 3
    feats = rng.standard_normal((m, d))
    for weights in (rng.standard_normal((s, d)), rng.standard_normal((m, s, d))):
        table = unary_table(feats, weights)
        for i in range(m):
            for k in range(s):
                w = weights[k] if weights.ndim == 2 else weights[i, k]
                assert abs(table[i, k] + sum(w[j] * feats[i, j] for j in range(d))) <= 1e-14


def test_unary_dim_mismatch():
    g = build_region_graph(1, 2, state_count=2)
    with pytest.raises(ShapeError):
        unary_potentials(np.ones((2, 3)), np.ones((2, 4)), g)
    with pytest.raises(ShapeError):
        unary_potentials(np.ones((3, 3)), np.ones((2, 3)), g)


def test_pairwise_energy_examples():
    levels = state_levels(2)
    assert pairwise_energy(1.0, 1, 1, levels) == 0
    assert pairwise_energy(1.0, 0, 1, levels) == 4
    with pytest.raises(ConfigError):
        pairwise_energy(-0.1, 0, 1, levels)


@given(st.floats(0, 10), st.integers(0, 7), st.integers(0, 7))
def test_pairwise_symmetric(beta, a, b):
    levels = state_levels(8)
    assert pairwise_energy(beta, a, b, levels) == pairwise_energy(beta, b, a, levels)


def test_joint_zero_potentials():
    g = build_region_graph(2, 2, state_count=3)
    for x in itertools.product(range(3), repeat=4):
        assert joint_log_prob_unnormalized(g, x) == 0


def test_single_node_probabilities():
    g = MtfGraph(1, 1, np.zeros((0, 2)), 2, unary=np.array([[0.0, -1.0]]))
    np.testing.assert_allclose(brute_force_marginals(g).marginals[0], [0.2689414213699951, 0.7310585786300049])
    field = belief_propagation(g)
    np.testing.assert_allclose(field.marginals[0], [0.2689414213699951, 0.7310585786300049], atol=1e-15)
    assert field.converged and field.iterations == 1


def test_two_node_chain_enumeration_sums_to_one(rng):
    g = build_region_graph(1, 2, state_count=2, beta=1.0).with_potentials(unary=rng.standard_normal((2, 2)))
    lp = [joint_log_prob_unnormalized(g, x) for x in itertools.product(range(2), repeat=2)]
    p = np.exp(lp) / np.exp(lp).sum()
    assert abs(p.sum() - 1) < 1e-15


def test_shift_invariance_of_probabilities(rng):
    g = build_region_graph(1, 3, state_count=3, beta=0.7).with_potentials(unary=rng.standard_normal((3, 3)))
    shifted = g.unary.copy()
    shifted[1] += 4.2
    a = brute_force_marginals(g).marginals
    b = brute_force_marginals(g.with_potentials(unary=shifted)).marginals
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_brute_force_guards():
    g = build_region_graph(1, 3, state_count=3, beta=0.5)
    field = brute_force_marginals(g.with_potentials(unary=np.random.default_rng(0).standard_normal((3, 3))))
    np.testing.assert_allclose(field.marginals.sum(axis=1), 1, atol=1e-12)
    with pytest.raises(CapacityError):
        brute_force_marginals(build_region_graph(4, 4, state_count=8))


# -- belief propagation -------------------------------------------------------------
def test_bp_matches_enumeration_on_random_trees():
    rng = np.random.default_rng(99)
    for _ in range(50):
        m, s = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        g = MtfGraph(1, m, random_tree(rng, m), s, unary=rng.normal(0, 2, (m, s)),
                     pairwise_beta=rng.uniform(0, 3, max(m - 1, 0)))
        field = belief_propagation(g)
        assert field.converged
        np.testing.assert_allclose(field.marginals, brute_force_marginals(g).marginals, atol=1e-8, rtol=0)


def test_bp_zero_potentials_loopy_square():
    g = build_region_graph(2, 2, state_count=4)
    field = belief_propagation(g)
    assert field.converged
    np.testing.assert_allclose(field.marginals, 0.25, atol=1e-15)


def test_bp_loopy_weak_coupling_close_to_exact(rng):
    g = build_region_graph(3, 3, state_count=3, beta=0.1).with_potentials(unary=rng.standard_normal((9, 3)))
    field = belief_propagation(g, max_iters=500)
    assert field.converged
    assert np.abs(field.marginals - brute_force_marginals(g).marginals).max() < 5e-3


@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 5), st.floats(0, 10), st.integers(0, 10 ** 6))
def test_bp_rows_normalised_even_without_convergence(rows, cols, s, beta, seed):
    rng = np.random.default_rng(seed)
    g = build_region_graph(rows, cols, state_count=s, beta=beta)
    unary = rng.normal(0, 5, (3, g.node_count, s))
    marg, converged, iters = belief_propagation_batch(g, unary, max_iters=5)
    assert np.all(marg >= 0)
    np.testing.assert_allclose(marg.sum(axis=2), 1.0, atol=1e-9)
    assert isinstance(converged, bool) and 1 <= iters <= 5


def test_bp_batch_matches_single(rng):
    g = build_region_graph(2, 3, state_count=3, beta=0.5)
    unary = rng.standard_normal((4, 6, 3))
    marg, _, _ = belief_propagation_batch(g, unary, tol=1e-12, max_iters=1000)
    for b in range(4):
        single = belief_propagation(g.with_potentials(unary=unary[b]), tol=1e-12, max_iters=1000).marginals
        np.testing.assert_allclose(marg[b], single, atol=1e-10)


def test_bp_rejects_bad_damping():
    g = build_region_graph(2, 2)
    with pytest.raises(ConfigError):
        belief_propagation(g, damping=1.0)


# -- rendering ------------------------------------------------------------------------
def test_uniform_marginals_render_mid_grey():
    g = build_region_graph(2, 4, state_count=8)
    img = render_topographic_image(np.full((8, 8), 1 / 8), g)
    assert img.pixels.shape == (64, 64)
    np.testing.assert_allclose(img.pixels, 0.5, atol=1e-12)


def test_single_node_point_mass():
    g = build_region_graph(1, 1, state_count=4)
    img = render_topographic_image(np.array([[0, 0, 0, 1.0]]), g, 16, 16)
    np.testing.assert_allclose(img.pixels, 1.0)
    g2 = build_region_graph(1, 3, state_count=4)
    img2 = render_topographic_image(np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0], [1.0, 0, 0, 0]]), g2, 12, 24)
    peak = np.unravel_index(np.argmax(img2.pixels), img2.pixels.shape)
    assert 8 <= peak[1] < 16


def test_opposite_point_masses_monotone():
    g = build_region_graph(1, 2, state_count=2)
    img = render_topographic_image(np.array([[1.0, 0.0], [0.0, 1.0]]), g, 8, 32)
    row = img.pixels[4]
    # node centres sit at columns 8 and 24
    assert np.all(np.diff(row[8:25]) > 0)
    assert row[8] < 0.5 < row[24]


def test_render_monotone_in_node_level(rng):
    g = build_region_graph(2, 3, state_count=3)
    marg = rng.dirichlet(np.ones(3), size=6)
    base = render_topographic_image(marg, g, 16, 16).pixels
    raised = marg.copy()
    raised[2] = [0, 0, 1.0]
    higher = render_topographic_image(raised, g, 16, 16).pixels
    assert np.all(higher >= base - 1e-15)


def test_interpolation_weights_normalised():
    w = interpolation_weights(build_region_graph(3, 5), 20, 30)
    assert w.shape == (600, 15)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_mtf_image_validation():
    with pytest.raises(ShapeError):
        MtfImage(np.zeros((4, 8)))
    with pytest.raises(Exception):
        MtfImage(np.full((8, 8), 1.5))


# -- stage -------------------------------------------------------------------------------
def test_stage_images(rng):
    stage = MtfStage(2, 6, MtfConfig(segments=4, states=4, image_size=16), seed=0)
    images, marginals, converged = stage.images(rng.standard_normal((3, 2, 4, 6)))
    assert images.shape == (3, 16, 16)
    assert marginals.shape == (3, 8, 4)
    assert np.all((images >= 0) & (images <= 1))
    np.testing.assert_allclose(marginals.sum(axis=2), 1, atol=1e-9)


def test_stage_set_beta_does_not_touch_caller_config():
    cfg = MtfConfig(segments=2, states=3, image_size=8)
    stage = MtfStage(1, 2, cfg)
    stage.set_beta(10.0)
    assert cfg.beta == 1.0
    assert np.all(stage.graph.pairwise_beta == 10.0)
