import json
from pathlib import Path

import numpy as np

from molgnn.featurize import FeatureConfig
from molgnn.graph import GraphTensor

FIXTURES = Path(__file__).parent / "fixtures"
DATA = Path(__file__).parent / "data"
ESOL = DATA / "esol.csv"
ESOL_TARGET = "measured log solubility in mols per litre"

# four binary atom features and two binary bond features: tiny, fast models
SMALL_FEATURES = FeatureConfig(
    atom_features=["aromatic", "hetero", "in_ring", "hydrogen_donor"],
    bond_features=["conjugated", "in_ring"],
)


def chem_corpus():
    return json.loads((FIXTURES / "chem_corpus.json").read_text())


def hill_formula(counts: dict, charge: int = 0) -> str:
    keys = sorted(counts)
    if "C" in counts:
        keys = ["C"] + (["H"] if "H" in counts else []) + [k for k in keys if k not in ("C", "H")]
    return "".join(k + (str(counts[k]) if counts[k] > 1 else "") for k in keys)


def random_graph(rng, node_dim=4, edge_dim=2, max_nodes=10, max_edges=16, weights=False,
                 edge_features=True, min_nodes=1) -> GraphTensor:
    """Random undirected graph (each edge stored in both directions)."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = int(rng.integers(0, min(len(pairs), max_edges // 2) + 1)) if pairs else 0
    chosen = [pairs[i] for i in rng.choice(len(pairs), size=k, replace=False)] if k else []
    src = [a for a, b in chosen] + [b for a, b in chosen]
    dst = [b for a, b in chosen] + [a for a, b in chosen]
    ef = None
    if edge_features:
        half = rng.normal(size=(k, edge_dim))
        ef = np.vstack([half, half]) if k else np.zeros((0, edge_dim))
    ew = None
    if weights:
        half = rng.uniform(0.2, 2.0, size=k)
        ew = np.concatenate([half, half])
    return GraphTensor(sizes=np.array([n]), node_feature=rng.normal(size=(n, node_dim)),
                       edge_src=np.array(src, dtype=np.int64), edge_dst=np.array(dst, dtype=np.int64),
                       edge_feature=ef, edge_weight=ew)


def dense_adjacency(g: GraphTensor) -> np.ndarray:
    """A[i, j] = sum of weights of edges j -> i."""
    a = np.zeros((g.num_nodes, g.num_nodes))
    w = g.edge_weight if g.edge_weight is not None else np.ones(g.num_edges)
    for s, d, x in zip(g.edge_src, g.edge_dst, w):
        a[d, s] += x
    return a


def block_permutation(g: GraphTensor, rng) -> np.ndarray:
    perm = []
    for start, size in zip(g.offsets, g.sizes):
        perm.extend((start + rng.permutation(size)).tolist())
    return np.array(perm, dtype=np.int64)
