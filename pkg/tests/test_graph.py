import numpy as np
import pytest

from helpers import block_permutation, dense_adjacency, random_graph
from molgnn.errors import FieldMismatch, RequiredFieldRemoval, ShapeMismatch
from molgnn.graph import GraphTensor, merge, permute_nodes, propagate, remove, separate, update


def _path3(features=(1.0, 2.0, 3.0)):
    return GraphTensor(sizes=[3], node_feature=np.array(features).reshape(-1, 1),
                       edge_src=[0, 1, 1, 2], edge_dst=[1, 0, 2, 1])


def test_invariants_enforced():
    with pytest.raises(ShapeMismatch):
        GraphTensor(sizes=[2], node_feature=np.zeros((3, 1)), edge_src=[], edge_dst=[])
    with pytest.raises(ShapeMismatch):
        GraphTensor(sizes=[2], node_feature=np.zeros((2, 1)), edge_src=[0], edge_dst=[5])
    with pytest.raises(ShapeMismatch):  # crosses blocks
        GraphTensor(sizes=[1, 1], node_feature=np.zeros((2, 1)), edge_src=[0], edge_dst=[1])


def test_merge_offsets_and_identity():
    g1 = GraphTensor(sizes=[1], node_feature=[[1.0]], edge_src=[], edge_dst=[])
    g2 = GraphTensor(sizes=[2], node_feature=[[2.0], [3.0]], edge_src=[0, 1], edge_dst=[1, 0])
    m = merge([g1, g2])
    assert list(m.sizes) == [1, 2]
    assert list(m.edge_src) == [1, 2] and list(m.edge_dst) == [2, 1]
    assert merge([g2]).structurally_equal(g2)


def test_merge_field_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(FieldMismatch):
        merge([random_graph(rng), random_graph(rng, edge_features=False)])
    with pytest.raises(FieldMismatch):
        merge([random_graph(rng, node_dim=3), random_graph(rng, node_dim=4)])


def test_separate_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        gs = [random_graph(rng, weights=True) for _ in range(int(rng.integers(1, 5)))]
        back = separate(merge(gs))
        assert len(back) == len(gs)
        assert all(a.structurally_equal(b) for a, b in zip(back, gs))
    single = random_graph(rng)
    assert separate(single)[0].structurally_equal(single)


def test_update_and_remove():
    g = random_graph(np.random.default_rng(2), weights=True, min_nodes=2)
    new = np.ones_like(g.node_feature)
    h = update(g, "node_feature", new)
    assert np.array_equal(h.node_feature, new) and not np.array_equal(g.node_feature, new)
    assert remove(g, "edge_weight").edge_weight is None and g.edge_weight is not None
    with pytest.raises(RequiredFieldRemoval):
        remove(g, "node_feature")
    with pytest.raises(ShapeMismatch):
        update(g, "node_feature", np.ones((g.num_nodes + 1, 2)))


def test_propagate_examples():
    assert propagate(_path3(), "sum").node_feature.ravel().tolist() == [2.0, 4.0, 2.0]
    assert propagate(_path3(), "mean").node_feature.ravel().tolist() == [2.0, 2.0, 2.0]
    assert propagate(_path3(), "max").node_feature.ravel().tolist() == [2.0, 3.0, 2.0]
    empty = GraphTensor(sizes=[2], node_feature=[[1.0], [5.0]], edge_src=[], edge_dst=[])
    for mode in ("sum", "mean", "max"):
        assert np.all(propagate(empty, mode).node_feature == 0)
    half = update(_path3(), "edge_weight", np.full(4, 0.5))
    assert np.array_equal(propagate(half).node_feature, 0.5 * propagate(_path3()).node_feature)


def test_propagate_subgraph_independence_and_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        gs = [random_graph(rng, max_nodes=12, weights=True) for _ in range(3)]
        m = merge(gs)
        joined = np.vstack([propagate(g).node_feature for g in gs])
        assert np.allclose(propagate(m).node_feature, joined, atol=1e-12, rtol=0)
        perm = block_permutation(m, rng)
        p = permute_nodes(m, perm)
        for mode in ("sum", "mean", "max"):
            assert np.allclose(propagate(p, mode).node_feature,
                               propagate(m, mode).node_feature[perm], atol=1e-12, rtol=0)


def test_propagate_matches_dense_small():
    rng = np.random.default_rng(4)
    for _ in range(20):
        g = random_graph(rng, max_nodes=12, max_edges=30, weights=bool(rng.integers(2)))
        a = dense_adjacency(g)
        assert np.allclose(propagate(g).node_feature, a @ g.node_feature, atol=1e-12, rtol=0)
