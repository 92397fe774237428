import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandwich_qpe import (
    RngStream,
    SpectralModel,
    SplitPolicy,
    build_tree,
    count_ones_leaves,
    degenerate_chain_tree,
    exact_amplitude,
    generate_model,
    nontrivial_nodes,
    tree_smin,
)
from sandwich_qpe.spectral import amplitude_moduli
from sandwich_qpe.sumtree import dump_tree, height_bound, parse_tree_dump


def make_tree(k, seed=0, x_min=1 / 3, **kwargs):
    return build_tree(
        k, SplitPolicy(stream=RngStream(seed).child(9), x_min=x_min), **kwargs
    )


# ----------------------------------------------------------------------
# Construction basics
# ----------------------------------------------------------------------

def test_k1_tree():
    tree = make_tree(1)
    assert [list(v) for v in tree.levels] == [[1], [1, 0]]
    assert tree.h_max == 1
    assert nontrivial_nodes(tree) == []
    assert count_ones_leaves(tree) == 1


def test_k5_forced_half_tree():
    tree = make_tree(5, x_min=0.5)
    assert [list(v) for v in tree.levels] == [[5], [3, 2], [2, 1, 1, 1], [1, 1]]
    values = [n.value for n in nontrivial_nodes(tree)]
    assert values == [5, 3, 2, 2]
    assert count_ones_leaves(tree) == 5
    padded = tree.padded()
    # Forced (1, 0) pairs under the level-2 unit leaves; child sums conserved.
    assert list(padded.levels[3]) == [1, 1, 1, 0, 1, 0, 1, 0]
    assert [n.value for n in padded.nontrivial_nodes()] == [5, 3, 2, 2]
    padded.validate()


def test_build_rejects_bad_inputs():
    with pytest.raises(ValueError):
        make_tree(0)
    with pytest.raises(ValueError):
        SplitPolicy(stream=RngStream(0), x_min=0.0)
    with pytest.raises(ValueError):
        SplitPolicy(stream=RngStream(0), x_min=0.6)


def test_build_determinism():
    t1 = make_tree(997, seed=3)
    t2 = make_tree(997, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(t1.levels, t2.levels))
    t3 = make_tree(997, seed=4)
    assert any(
        not np.array_equal(a, b) for a, b in zip(t1.levels, t3.levels)
    )


# ----------------------------------------------------------------------
# Invariants (property-based)
# ----------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 5000),
    st.integers(0, 10**6),
    st.floats(0.05, 0.5),
)
def test_tree_invariants(k, seed, x_min):
    tree = make_tree(k, seed=seed, x_min=x_min)
    tree.validate()
    assert tree.k == k
    assert count_ones_leaves(tree) == k
    assert tree.h_max <= height_bound(k, 1.0 - x_min)
    # Non-trivial nodes per height stay below k/2: each has value >= 2 and
    # values at a height sum to at most k.
    per_height = {}
    for node in nontrivial_nodes(tree):
        per_height[node.height] = per_height.get(node.height, 0) + 1
        assert node.value >= 2
        assert node.left_value + node.right_value == node.value
    for count in per_height.values():
        assert count <= max(1, k / 2)
    # Exactly k - 1 non-trivial nodes: they form a full binary tree over the
    # k unit leaves.
    assert len(nontrivial_nodes(tree)) == k - 1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 300), st.integers(0, 10**4))
def test_padded_view_equivalence(k, seed):
    tree = make_tree(k, seed=seed)
    padded = tree.padded()
    original = [(n.height, n.position, n.value) for n in tree.nontrivial_nodes()]
    assert [(n.height, n.position, n.value) for n in padded.nontrivial_nodes()] == original
    assert padded.h_max == tree.h_max
    assert count_ones_leaves(padded) == k


def test_height_bound_large_k_many_seeds():
    # k = 10^6 at x_min = 1/3: bound is ceil(ln 1e6 / ln 1.5) + 1 = 36.
    bound = height_bound(10**6, 2.0 / 3.0)
    assert bound == math.ceil(math.log(10**6) / math.log(1.5)) + 1
    for seed in range(100):
        tree = make_tree(10**6, seed=seed)
        assert tree.h_max <= bound
        assert tree.levels[-1].size > 0


def test_count_ones_leaves_k997_many_trees():
    for seed in range(100):
        assert count_ones_leaves(make_tree(997, seed=seed)) == 997


# ----------------------------------------------------------------------
# Chain tree
# ----------------------------------------------------------------------

def test_chain_tree_k3():
    tree = degenerate_chain_tree(3)
    assert [n.value for n in nontrivial_nodes(tree)] == [3, 2]
    assert tree.h_max == 3
    assert count_ones_leaves(tree) == 3
    tree.validate()


def test_chain_tree_k1():
    tree = degenerate_chain_tree(1)
    assert nontrivial_nodes(tree) == []
    assert tree.h_max == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200))
def test_chain_tree_properties(k):
    tree = degenerate_chain_tree(k)
    assert tree.h_max == k
    assert [n.value for n in nontrivial_nodes(tree)] == list(range(k, 1, -1))
    assert count_ones_leaves(tree) == k
    tree.validate()


# ----------------------------------------------------------------------
# Leaf cutoff
# ----------------------------------------------------------------------

def test_leaf_cutoff_stops_early():
    tree = make_tree(100, seed=2, leaf_cutoff=3)
    tree.validate()
    counts = tree.leaf_value_counts()
    assert max(counts) <= 3
    assert sum(v * c for v, c in counts.items()) == 100
    full = make_tree(100, seed=2)
    assert tree.h_max < full.h_max


def test_leaf_cutoff_at_or_above_k_is_single_node():
    tree = make_tree(3, leaf_cutoff=3)
    assert tree.node_count == 1
    assert nontrivial_nodes(tree) == []


# ----------------------------------------------------------------------
# s_min diagnostics
# ----------------------------------------------------------------------

def test_tree_smin_single_eigenstate():
    model = SpectralModel([0.7], [1.0])
    assert tree_smin(make_tree(64, seed=1), model) == pytest.approx(1.0, abs=1e-12)


def test_tree_smin_hits_zero_magnitude():
    model = SpectralModel([0.0, math.pi / 2], [0.5, 0.5])  # r_2 = 0
    tree = make_tree(8, x_min=0.5)  # contains value 2
    assert 2 in set(int(v) for v in tree.all_values())
    assert tree_smin(tree, model) < 1e-14


def test_tree_smin_exclude_root():
    model = generate_model("uniform_random", 8, 5)
    tree = make_tree(50, seed=6)
    with_root = tree_smin(tree, model)
    without = tree_smin(tree, model, exclude_root=True)
    assert without >= with_root


def test_tree_smin_dominates_exhaustive_rmin():
    # Node values are a subset of 1..k, so every tree s_min is at least the
    # exhaustive minimum over that range.
    model = generate_model("uniform_random", 10, 11)
    k = 200
    r_min = float(amplitude_moduli(model, k)[1:].min())
    for seed in range(1000):
        assert tree_smin(make_tree(k, seed=seed), model) >= r_min


# ----------------------------------------------------------------------
# Serialization
# ----------------------------------------------------------------------

def test_dump_roundtrip():
    tree = make_tree(37, seed=9)
    text = dump_tree(tree)
    back = parse_tree_dump(text)
    assert [list(v) for v in back.levels] == [list(v) for v in tree.levels]
    assert [list(m) for m in back.split_masks] == [list(m) for m in tree.split_masks]
    assert dump_tree(back) == text


def test_dump_roundtrip_chain():
    tree = degenerate_chain_tree(12)
    assert dump_tree(parse_tree_dump(dump_tree(tree))) == dump_tree(tree)


def test_dump_lists_trivial_flags():
    text = dump_tree(make_tree(1))
    lines = text.strip().splitlines()
    assert lines[0] == "height,position,value,trivial"
    # Root of the k=1 tree has a zero child, hence trivial.
    assert lines[1] == "0,1,1,1"
