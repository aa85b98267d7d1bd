import hashlib
import struct

import numpy as np
import pytest

from helpers import FIXTURES, SMALL_FEATURES, random_graph
from molgnn.dataset import (
    GraphDataset,
    load_csv_dataset,
    load_records,
    read_records,
    read_table,
    split,
    write_records,
)
from molgnn.errors import (
    BadFractions,
    BatchParseError,
    CorruptRecordFile,
    DigestMismatch,
    MissingColumn,
    NoValidRows,
    TruncatedRecord,
)
from molgnn.featurize import FeatureConfig, encode_molecule

GOLDEN_SHA256 = "c6210becdcdf2058ccdbc3bbb7d3d71b676130511ef7234e6558b50a66a7f8a4"


def _csv(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ----------------------------------------------------------------- tables

def test_read_table_masks_empty_cells(tmp_path):
    p = _csv(tmp_path, "smiles,a,b\nCCO,1.5,\nc1ccccc1,2,3\nCC,,0\n")
    t = read_table(p, "smiles", ["a", "b"])
    assert t.smiles == ["CCO", "c1ccccc1", "CC"]
    assert t.mask.tolist() == [[True, False], [True, True], [False, True]]
    assert t.labels[1].tolist() == [2.0, 3.0] and t.report == []


def test_read_table_errors(tmp_path):
    p = _csv(tmp_path, "smi,y\nCCO,1\n")
    with pytest.raises(MissingColumn):
        read_table(p, "smiles", ["y"])
    with pytest.raises(MissingColumn):
        read_table(p, "smi", ["z"])
    bad = _csv(tmp_path, "smiles,y\nC1CC,1\nCCO,2\nCXC,3\n", "bad.csv")
    with pytest.raises(BatchParseError) as err:
        read_table(bad, "smiles", ["y"])
    assert [f[0] for f in err.value.failures] == [1, 3]
    lenient = read_table(bad, "smiles", ["y"], strict=False)
    assert lenient.smiles == ["CCO"] and [r[0] for r in lenient.report] == [1, 3]
    assert "UnclosedRing" in lenient.report[0][2]
    empty = _csv(tmp_path, "smiles,y\nC1CC,1\n", "empty.csv")
    with pytest.raises(NoValidRows):
        read_table(empty, "smiles", ["y"], strict=False)
    nan = _csv(tmp_path, 'smiles,y\nCCO,abc\n"CC",2\n', "nan.csv")
    t = read_table(nan, "smiles", ["y"], strict=False)
    assert t.smiles == ["CC"] and "not a number" in t.report[0][2]


def test_load_csv_dataset(tmp_path):
    p = _csv(tmp_path, "smiles,y\nCCO,1\nc1ccccc1,2\n")
    ds, report = load_csv_dataset(p, SMALL_FEATURES, "smiles", ["y"])
    assert len(ds) == 2 and ds.num_tasks == 1 and report == []
    assert ds.graphs[1].num_nodes == 6 and ds.smiles == ["CCO", "c1ccccc1"]
    batches = list(ds.batches(1))
    assert len(batches) == 2 and batches[0][1].tolist() == [[1.0]]


# ----------------------------------------------------------------- splits

def test_split_examples():
    parts = split(10, (0.7, 0.1, 0.2), seed=1)
    assert [len(p) for p in parts] == [7, 1, 2]
    again = split(10, (0.7, 0.1, 0.2), seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))
    assert any(not np.array_equal(a, b) for a, b in zip(parts, split(10, (0.7, 0.1, 0.2), seed=2)))
    y = np.array([1] * 4 + [0] * 16)
    halves = split(20, (0.5, 0.5), seed=3, strategy="stratified", labels=y)
    assert [int(y[h].sum()) for h in halves] == [2, 2]


def test_split_partitions_are_disjoint_and_cover():
    rng = np.random.default_rng(0)
    for n in range(0, 60):
        fr = rng.dirichlet(np.ones(3))
        fr = fr / fr.sum()
        parts = split(n, fr, seed=n)
        allidx = np.concatenate(parts)
        assert sorted(allidx.tolist()) == list(range(n))
        raw = fr * n
        assert all(abs(len(p) - r) < 1 for p, r in zip(parts, raw))


def test_stratified_balance_within_one():
    rng = np.random.default_rng(1)
    for seed in range(30):
        n = int(rng.integers(10, 80))
        y = (rng.random(n) < 0.3).astype(int)
        fr = (0.7, 0.05, 0.25)
        parts = split(n, fr, seed=seed, strategy="stratified", labels=y)
        assert sorted(np.concatenate(parts).tolist()) == list(range(n))
        for cls in (0, 1):
            total = int((y == cls).sum())
            for p, f in zip(parts, fr):
                assert abs(int((y[p] == cls).sum()) - f * total) < 1


def test_split_bad_fractions():
    for fr in ((0.5, 0.4), (1.2, -0.2), ()):
        with pytest.raises(BadFractions):
            split(10, fr)
    with pytest.raises(BadFractions):
        split(10, (0.5, 0.5), strategy="stratified")
    with pytest.raises(BadFractions):
        split(10, (0.5, 0.5), strategy="scaffold")


# ---------------------------------------------------------------- records

def test_round_trip_random_graphs(tmp_path):
    cfg = SMALL_FEATURES
    rng = np.random.default_rng(2)
    graphs, labels, masks = [], [], []
    for i in range(100):
        g = random_graph(rng, node_dim=cfg.atom_dim, edge_dim=cfg.bond_dim, weights=bool(i % 2),
                         edge_features=bool(i % 3))
        graphs.append(g)
        labels.append(rng.normal(size=3))
        masks.append(rng.random(3) < 0.7)
    path = tmp_path / "r.mgrf"
    assert write_records(path, graphs, np.array(labels), np.array(masks), cfg) == 100
    back = list(read_records(path, cfg))
    assert len(back) == 100
    for (g, y, m), g0, y0, m0 in zip(back, graphs, labels, masks):
        f32 = g0.node_feature.astype(np.float32).astype(np.float64)
        assert np.array_equal(g.node_feature, f32)
        assert np.array_equal(g.edge_src, g0.edge_src) and np.array_equal(g.edge_dst, g0.edge_dst)
        for a, b in ((g.edge_feature, g0.edge_feature), (g.edge_weight, g0.edge_weight)):
            assert (a is None) == (b is None)
            if a is not None:
                assert np.array_equal(a, b.astype(np.float32).astype(np.float64))
        assert np.array_equal(m, m0)
        assert np.array_equal(y[m], y0[m0].astype(np.float32).astype(np.float64))


def test_molecules_round_trip_exactly(tmp_path):
    cfg = FeatureConfig()
    graphs = [encode_molecule(s, cfg) for s in ("CCO", "c1ccccc1", "CC(=O)Nc1ccc(O)cc1")]
    path = tmp_path / "m.mgrf"
    write_records(path, graphs, cfg=cfg)
    ds = load_records(path, cfg)
    assert ds.num_tasks == 0
    assert all(a.structurally_equal(b) for a, b in zip(ds.graphs, graphs))


def test_empty_file_is_valid(tmp_path):
    path = tmp_path / "e.mgrf"
    assert write_records(path, [], cfg=SMALL_FEATURES) == 0
    assert path.stat().st_size == 46
    assert list(read_records(path, SMALL_FEATURES)) == []


def test_digest_mismatch(tmp_path):
    path = tmp_path / "d.mgrf"
    write_records(path, [encode_molecule("CC", SMALL_FEATURES)], cfg=SMALL_FEATURES)
    with pytest.raises(DigestMismatch):
        list(read_records(path, FeatureConfig()))


def test_truncation_reports_record_offset(tmp_path):
    cfg = SMALL_FEATURES
    graphs = [encode_molecule(s, cfg) for s in ("CCO", "c1ccccc1", "CCN")]
    path = tmp_path / "t.mgrf"
    write_records(path, graphs, cfg=cfg)
    data = path.read_bytes()

    def rec_size(g):
        return (9 + 4 * g.num_nodes * cfg.atom_dim + 8 * g.num_edges
                + 4 * g.num_edges * cfg.bond_dim + 2 + 0 + 0)

    second = 46 + rec_size(graphs[0])
    third = second + rec_size(graphs[1])
    assert third + rec_size(graphs[2]) == len(data)
    for cut in (second + 3, second + 40, third - 1):
        path.write_bytes(data[:cut])
        it = read_records(path, cfg)
        next(it)
        with pytest.raises(TruncatedRecord) as err:
            list(it)
        assert err.value.offset == second
    path.write_bytes(data + b"\x00")
    with pytest.raises(CorruptRecordFile):
        list(read_records(path, cfg))
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CorruptRecordFile):
        list(read_records(path, cfg))


def test_golden_file_is_byte_exact(tmp_path):
    golden = (FIXTURES / "golden.mgrf").read_bytes()
    assert hashlib.sha256(golden).hexdigest() == GOLDEN_SHA256
    cfg = FeatureConfig()
    graphs = [encode_molecule("CCO", cfg), encode_molecule("c1ccncc1", cfg)]
    path = tmp_path / "g.mgrf"
    write_records(path, graphs, np.array([[0.5, -1.25], [2.0, 0.0]]),
                  np.array([[True, True], [True, False]]), cfg)
    assert path.read_bytes() == golden


def test_golden_file_layout_decoded_by_hand():
    data = (FIXTURES / "golden.mgrf").read_bytes()
    cfg = FeatureConfig()
    magic, version, digest, count = struct.unpack_from("<4sH32sQ", data, 0)
    assert (magic, version, count) == (b"MGRF", 1, 2) and digest == cfg.digest()
    pos = 46
    nodes, edges, flags = struct.unpack_from("<IIB", data, pos)
    assert (nodes, edges, flags) == (3, 4, 1)
    pos += 9 + 4 * nodes * cfg.atom_dim
    src = struct.unpack_from("<4I", data, pos)
    dst = struct.unpack_from("<4I", data, pos + 16)
    assert list(zip(src, dst)) == [(0, 1), (1, 0), (1, 2), (2, 1)]
    pos += 32 + 4 * edges * cfg.bond_dim
    (k,) = struct.unpack_from("<H", data, pos)
    labels = struct.unpack_from("<2f", data, pos + 2)
    bits = data[pos + 10]
    assert k == 2 and labels == (0.5, -1.25) and bits == 0b11
    pos += 11
    nodes, edges, flags = struct.unpack_from("<IIB", data, pos)
    assert (nodes, edges, flags) == (6, 12, 1)
    end = pos + 9 + 4 * nodes * cfg.atom_dim + 8 * edges + 4 * edges * cfg.bond_dim
    (k,) = struct.unpack_from("<H", data, end)
    assert k == 2 and struct.unpack_from("<2f", data, end + 2) == (2.0, 0.0)
    assert data[end + 10] == 0b01 and end + 11 == len(data)


def test_dataset_subset_and_shapes():
    g = [encode_molecule(s, SMALL_FEATURES) for s in ("C", "CC", "CCC")]
    ds = GraphDataset(g, [1.0, 2.0, 3.0], [True, True, False], ["C", "CC", "CCC"])
    sub = ds.subset([2, 0])
    assert sub.smiles == ["CCC", "C"] and sub.labels.ravel().tolist() == [3.0, 1.0]
    assert sub.mask.ravel().tolist() == [False, True]
    assert ds.merged().num_nodes == 6
