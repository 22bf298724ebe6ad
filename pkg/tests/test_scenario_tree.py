import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tree
from hedgekit.scenario_tree import (
    CapacityError, ScenarioTree, TreeError, binary_tree, p_inner, project_nonanticipative,
    project_scenario,
)
from oracles import dense_projection


def test_two_scenario_example():
    tree = ScenarioTree([0.25, 0.75], [[[0, 1]]], [1])
    x = tree.project([[1.0], [3.0]])
    assert np.array_equal(x, [[2.5], [2.5]])


def test_singletons_leave_rows_unchanged():
    tree = binary_tree(3, 2)
    z = np.random.default_rng(0).standard_normal((4, 6))
    x = tree.project(z)
    # last stage bundles are singletons: exact copy
    assert np.array_equal(x[:, 4:], z[:, 4:])
    assert np.allclose(x[:, :2], z[:, :2].mean(axis=0))


def test_binary_tree_structure():
    tree = binary_tree(4, [1, 2, 1, 3])
    assert tree.S == 8 and tree.n == 7
    assert [len(tree.bundles(t)) for t in range(4)] == [1, 2, 4, 8]
    assert tree.bundle(5, 2).tolist() == [4, 5]
    assert tree.bundle_id(5, 1) == 1


@pytest.mark.parametrize(
    "probs, parts, dims",
    [
        ([0.5, 0.6], [[[0, 1]]], [1]),
        ([0.5, 0.5], [[[0], [1]]], [1]),
        ([0.5, 0.5], [[[0, 1]], [[0]]], [1, 1]),
        ([0.5, 0.5], [[[0, 1]], [[0, 1], [1]]], [1, 1]),
        ([1.0, 0.0], [[[0, 1]]], [1]),
        ([0.5, 0.5], [[[0, 1]]], [0]),
        ([0.5, 0.5], [[[0, 1]], [[0], [1]]], [1]),
        ([0.25] * 4, [[[0, 1, 2, 3]], [[0, 1], [2, 3]], [[0, 2], [1, 3]]], [1, 1, 1]),
    ],
)
def test_invalid_trees_rejected(probs, parts, dims):
    with pytest.raises(TreeError):
        ScenarioTree(probs, parts, dims)


def test_capacity_limit():
    with pytest.raises(CapacityError):
        binary_tree(6, 1, max_scenarios=16)


def test_shape_mismatch_rejected():
    tree = binary_tree(2, 1)
    with pytest.raises(TreeError):
        tree.project(np.zeros((3, 2)))
    with pytest.raises(IndexError):
        tree.project_row(np.zeros((2, 2)), 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_S=8, max_T=3, max_dim=2)
    z = rng.standard_normal((tree.S, tree.n)) * 3
    x = project_nonanticipative(z, tree)
    ref = dense_projection(z, tree.probabilities, tree.layout.stage_dims, tree.partitions())
    assert np.abs(x - ref).max() <= 1e-9
    assert np.abs(tree.project(x) - x).max() <= 1e-10
    # P-orthogonality of the residual against W
    y = tree.random_in_W(rng)
    assert abs(p_inner(z - x, y, tree)) <= 1e-10 * (1 + np.abs(z).max() * np.abs(y).max())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_row_projection_is_bitwise_row_of_full(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng)
    z = rng.standard_normal((tree.S, tree.n))
    x = tree.project(z)
    for s in range(tree.S):
        assert np.array_equal(project_scenario(z, s, tree), x[s])


def test_random_in_W_is_fixed():
    rng = np.random.default_rng(3)
    tree = binary_tree(4, [2, 1, 1, 2])
    y = tree.random_in_W(rng)
    assert np.array_equal(tree.project(y), y) or np.abs(tree.project(y) - y).max() < 1e-15


def test_probabilities_renormalized_and_readonly():
    tree = ScenarioTree([0.3, 0.7 + 5e-13], [[[0, 1]], [[0], [1]]], [1, 1])
    assert tree.probabilities.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        tree.probabilities[0] = 1.0


def test_equality_and_partitions():
    a = binary_tree(3, 1)
    b = ScenarioTree([0.25] * 4, a.partitions(), [1, 1, 1])
    assert a == b
    assert a != binary_tree(3, 2)
