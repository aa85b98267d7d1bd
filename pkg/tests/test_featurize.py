import json

import numpy as np
import pytest

from helpers import chem_corpus
from molgnn.chem import parse_smiles
from molgnn.errors import BatchParseError, EmptyBatch, UnknownFeatureName
from molgnn.featurize import (
    ATOM_ONE_HOT,
    FeatureConfig,
    encode_batch,
    encode_molecule,
    featurize_atom,
    featurize_bond,
)
from molgnn.graph import merge


def _block(vec, cfg, kind, name):
    return vec[cfg.block_slices(kind)[name]]


def test_benzene_carbon_symbol_degree_aromatic():
    cfg = FeatureConfig(atom_features=["symbol", "degree", "aromatic"], bond_features=[])
    mol = parse_smiles("c1ccccc1")
    v = featurize_atom(mol.atoms[0], mol, cfg)
    assert _block(v, cfg, "atom", "symbol")[ATOM_ONE_HOT["symbol"].index("C")] == 1
    assert _block(v, cfg, "atom", "degree")[2] == 1
    assert _block(v, cfg, "atom", "aromatic")[0] == 1
    assert len(v) == 11 + 8 + 1


def test_out_of_vocabulary_symbol():
    cfg = FeatureConfig()
    mol = parse_smiles("[Se]")
    sym = _block(featurize_atom(mol.atoms[0], mol, cfg), cfg, "atom", "symbol")
    assert sym[-1] == 1 and sym.sum() == 1


def test_methane_hydrogen_count():
    cfg = FeatureConfig()
    mol = parse_smiles("C")
    assert _block(featurize_atom(mol.atoms[0], mol, cfg), cfg, "atom", "num_hydrogens")[4] == 1


def test_bond_features():
    cfg = FeatureConfig()
    mol = parse_smiles("c1ccccc1")
    v = featurize_bond(mol.bonds[0], mol, cfg)
    assert _block(v, cfg, "bond", "bond_type")[3] == 1
    assert _block(v, cfg, "bond", "conjugated")[0] == 1
    assert _block(v, cfg, "bond", "in_ring")[0] == 1
    assert _block(v, cfg, "bond", "ring_size")[3] == 1  # sizes 3..8 -> index 3 is 6

    ethane = parse_smiles("CC")
    v = featurize_bond(ethane.bonds[0], ethane, cfg)
    assert _block(v, cfg, "bond", "bond_type")[0] == 1
    for name in ("conjugated", "rotatable", "in_ring"):
        assert _block(v, cfg, "bond", name)[0] == 0

    butadiene = parse_smiles("C=CC=C")
    v = featurize_bond(butadiene.bonds[1], butadiene, cfg)
    assert _block(v, cfg, "bond", "bond_type")[0] == 1
    assert _block(v, cfg, "bond", "conjugated")[0] == 1
    assert _block(v, cfg, "bond", "rotatable")[0] == 1


def test_acceptor_and_donor_rules():
    cfg = FeatureConfig(atom_features=["hydrogen_donor", "hydrogen_acceptor"], bond_features=[])
    pyrrole = parse_smiles("c1cc[nH]c1")
    n = pyrrole.atoms[3]
    assert list(featurize_atom(n, pyrrole, cfg)) == [1.0, 0.0]
    pyridine = parse_smiles("c1ccncc1")
    assert list(featurize_atom(pyridine.atoms[3], pyridine, cfg)) == [0.0, 1.0]
    nh4 = parse_smiles("[NH4+]")
    assert list(featurize_atom(nh4.atoms[0], nh4, cfg)) == [1.0, 0.0]


def test_unknown_and_excluded_features_rejected():
    with pytest.raises(UnknownFeatureName):
        FeatureConfig(atom_features=["gasteiger_charge"])
    with pytest.raises(UnknownFeatureName):
        FeatureConfig(bond_features=["colour"])
    with pytest.raises(UnknownFeatureName):
        FeatureConfig.from_dict({"atom_features": ["symbol"], "extra": 1})


@pytest.mark.parametrize("entry", chem_corpus(), ids=lambda e: e["name"])
def test_layout_invariants(entry):
    cfg = FeatureConfig()
    g = encode_molecule(entry["smiles"], cfg)
    x = g.node_feature
    assert x.shape[1] == cfg.atom_dim and np.all(np.isfinite(x))
    for kind, mat in (("atom", x), ("bond", g.edge_feature)):
        for name, sl in cfg.block_slices(kind).items():
            block = mat[:, sl]
            if cfg.block_width(kind, name) > 1:
                assert np.all(block.sum(axis=1) == 1)
            assert set(np.unique(block)) <= {0.0, 1.0}


def test_encode_shapes():
    cfg = FeatureConfig()
    g = encode_molecule("c1ccccc1", cfg)
    assert g.node_feature.shape == (6, cfg.atom_dim) and g.num_edges == 12
    pairs = list(zip(g.edge_src, g.edge_dst))
    assert pairs == sorted(pairs)
    # each undirected bond twice with identical features
    for (s, d), f in zip(pairs, g.edge_feature):
        k = pairs.index((d, s))
        assert np.array_equal(g.edge_feature[k], f)
    c = encode_molecule("C", cfg)
    assert c.node_feature.shape == (1, cfg.atom_dim) and c.num_edges == 0
    cc = encode_molecule("C.C", cfg)
    assert list(cc.sizes) == [2] and cc.num_edges == 0


def test_encode_batch():
    cfg = FeatureConfig()
    g = encode_batch(["C", "CC"], cfg)
    assert list(g.sizes) == [1, 2] and g.num_nodes == 3
    assert set(g.edge_src.tolist()) == {1, 2}
    with pytest.raises(EmptyBatch):
        encode_batch([], cfg)
    with pytest.raises(BatchParseError) as err:
        encode_batch(["C1CC", "C"], cfg)
    assert err.value.failures[0][0] == 0
    report = []
    lenient = encode_batch(["C1CC", "C"], cfg, strict=False, report=report)
    assert list(lenient.sizes) == [1] and report[0][0] == 0


def test_batch_equals_merge_of_singles():
    cfg = FeatureConfig()
    xs = [e["smiles"] for e in chem_corpus()]
    assert encode_batch(xs, cfg).structurally_equal(merge([encode_molecule(s, cfg) for s in xs]))


def test_config_json_roundtrip_and_digest():
    cfg = FeatureConfig(atom_features=["symbol", "degree"], vocabularies={"atom.symbol": ["C", "N"]})
    back = FeatureConfig.from_json(cfg.to_json())
    assert back.to_dict() == cfg.to_dict() and back.digest() == cfg.digest()
    assert len(cfg.digest()) == 32
    assert FeatureConfig().digest() != cfg.digest()
    assert json.loads(cfg.to_json())["vocabularies"]["atom.symbol"] == ["C", "N"]
    assert cfg.atom_dim == 3 + 8


def test_self_loops_flag():
    cfg = FeatureConfig(self_loops=True)
    g = encode_molecule("CC", cfg)
    assert g.num_edges == 4
    assert np.all(g.edge_feature[g.edge_src == g.edge_dst] == 0)
