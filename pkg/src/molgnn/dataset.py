"""CSV ingestion, train/val/test splits and the MGRF binary record format.

MGRF layout (all integers little-endian)::

    header   b"MGRF" | u16 version | 32-byte feature-config digest | u64 count
    record   u32 nodes | u32 edges | u8 flags
             | f32 node_feature[nodes * atom_dim]
             | u32 edge_src[edges] | u32 edge_dst[edges]
             | f32 edge_feature[edges * bond_dim]   (flags & 1)
             | f32 edge_weight[edges]               (flags & 2)
             | u16 label count k | f32 labels[k] | mask bits[ceil(k / 8)], LSB first
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .chem import parse_smiles
from .errors import (
    BadFractions,
    BatchParseError,
    CorruptRecordFile,
    DigestMismatch,
    EmptyBatch,
    MissingColumn,
    MolGnnError,
    NoValidRows,
    ShapeMismatch,
    TruncatedRecord,
)
from .featurize import FeatureConfig, encode_mol
from .graph import GraphTensor, merge
from .rng import stream

MAGIC = b"MGRF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH32sQ")
_RECORD_HEAD = struct.Struct("<IIB")
FLAG_EDGE_FEATURE = 1
FLAG_EDGE_WEIGHT = 2


# ------------------------------------------------------------------ tables

@dataclass
class TableResult:
    rows: list  # (smiles, labels, mask)
    report: list  # (row number, smiles, reason); row numbers are 1-based data rows

    @property
    def smiles(self) -> list[str]:
        return [r[0] for r in self.rows]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows], dtype=np.float64).reshape(len(self.rows), -1)

    @property
    def mask(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=bool).reshape(len(self.rows), -1)


def read_table(path, smiles_column: str = "smiles", label_columns: Sequence[str] = (),
               strict: bool = True, validate: bool = True) -> TableResult:
    """Read (SMILES, labels, mask) rows from a CSV with a header row.

    Empty label cells are masked out. Rows whose labels do not parse, or whose
    SMILES fail to parse when ``validate`` is set, go to the report; in strict
    mode an unparseable SMILES aborts with :class:`BatchParseError` after the
    whole file has been scanned.
    """
    rows, report, failures = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [smiles_column, *label_columns]:
            if col not in header:
                raise MissingColumn(f"column {col!r} not found in {path} (have {header})")
        for rownum, rec in enumerate(reader, start=1):
            smi = (rec[smiles_column] or "").strip()
            labels, mask, bad = [], [], None
            for col in label_columns:
                cell = (rec[col] or "").strip()
                if cell == "":
                    labels.append(0.0)
                    mask.append(False)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    bad = f"label {col!r} is not a number: {cell!r}"
                    break
                if not np.isfinite(value):
                    bad = f"label {col!r} is not finite: {cell!r}"
                    break
                labels.append(value)
                mask.append(True)
            if bad is None and validate:
                try:
                    parse_smiles(smi)
                except MolGnnError as exc:
                    bad = f"{type(exc).__name__}: {exc}"
                    failures.append((rownum, smi, exc))
            if bad is not None:
                report.append((rownum, smi, bad))
                continue
            rows.append((smi, labels, mask))
    if strict and failures:
        raise BatchParseError(failures)
    if not rows:
        raise NoValidRows(f"no valid rows in {path}")
    return TableResult(rows, report)


# ----------------------------------------------------------------- dataset

@dataclass
class GraphDataset:
    """Single-molecule graphs with per-graph label and mask rows."""

    graphs: list
    labels: np.ndarray
    mask: np.ndarray
    smiles: Optional[list] = None

    def __post_init__(self):
        n = len(self.graphs)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(n, -1)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(n, -1)
        if self.labels.shape != self.mask.shape:
            raise ShapeMismatch("labels and mask must have the same shape")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def num_tasks(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "GraphDataset":
        idx = [int(i) for i in indices]
        smiles = [self.smiles[i] for i in idx] if self.smiles is not None else None
        return GraphDataset([self.graphs[i] for i in idx], self.labels[idx], self.mask[idx], smiles)

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator:
        """Yield (merged graph, labels, mask); shuffled when ``rng`` is given."""
        if len(self) == 0:
            raise EmptyBatch("dataset is empty")
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield merge([self.graphs[i] for i in idx]), self.labels[idx], self.mask[idx]

    def merged(self) -> GraphTensor:
        return merge(self.graphs)


def dataset_from_table(table: TableResult, cfg: FeatureConfig) -> GraphDataset:
    graphs = [encode_mol(parse_smiles(s), cfg) for s in table.smiles]
    return GraphDataset(graphs, table.labels, table.mask, table.smiles)


def load_csv_dataset(path, cfg: FeatureConfig, smiles_column: str = "smiles",
                     label_columns: Sequence[str] = (), strict: bool = True):
    table = read_table(path, smiles_column, label_columns, strict=strict)
    return dataset_from_table(table, cfg), table.report


# ------------------------------------------------------------------ splits

def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    left = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split(n: int, fractions: Sequence[float], seed: int = 0, strategy: str = "random",
          labels: Optional[Sequence] = None) -> list[np.ndarray]:
    """Disjoint, exhaustive index partitions of ``range(n)``.

    Partition sizes follow the largest-remainder rule. The stratified mode
    applies that rule per binary class, so each partition's class counts are
    within one item of the exact proportion.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be non-negative and sum to 1, got {fractions}")
    rng = stream(seed, "split")
    if strategy == "random":
        perm = rng.permutation(n)
        bounds = np.cumsum([0] + _largest_remainder(n, fractions))
        return [np.sort(perm[bounds[k]:bounds[k + 1]]) for k in range(len(fractions))]
    if strategy == "stratified":
        if labels is None or len(labels) != n:
            raise BadFractions("stratified split needs one label per item")
        y = np.asarray(labels)
        parts = [[] for _ in fractions]
        for cls in np.unique(y):
            members = np.flatnonzero(y == cls)
            members = members[rng.permutation(len(members))]
            bounds = np.cumsum([0] + _largest_remainder(len(members), fractions))
            for k in range(len(fractions)):
                parts[k].extend(members[bounds[k]:bounds[k + 1]].tolist())
        return [np.array(sorted(p), dtype=np.int64) for p in parts]
    raise BadFractions(f"unknown split strategy {strategy!r}")


# ---------------------------------------------------------------- records

def _encode_record(g: GraphTensor, labels, mask, cfg: FeatureConfig) -> bytes:
    if g.num_subgraphs != 1:
        raise ShapeMismatch("each record holds exactly one graph")
    if g.node_feature.shape[1] != cfg.atom_dim:
        raise ShapeMismatch(f"node width {g.node_feature.shape[1]} != layout width {cfg.atom_dim}")
    flags = 0
    if g.edge_feature is not None:
        if g.edge_feature.shape[1] != cfg.bond_dim:
            raise ShapeMismatch(f"edge width {g.edge_feature.shape[1]} != layout width {cfg.bond_dim}")
        flags |= FLAG_EDGE_FEATURE
    if g.edge_weight is not None:
        flags |= FLAG_EDGE_WEIGHT
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if labels.shape != mask.shape:
        raise ShapeMismatch("labels and mask lengths differ")
    parts = [
        _RECORD_HEAD.pack(g.num_nodes, g.num_edges, flags),
        g.node_feature.astype("<f4").tobytes(),
        g.edge_src.astype("<u4").tobytes(),
        g.edge_dst.astype("<u4").tobytes(),
    ]
    if flags & FLAG_EDGE_FEATURE:
        parts.append(g.edge_feature.astype("<f4").tobytes())
    if flags & FLAG_EDGE_WEIGHT:
        parts.append(g.edge_weight.astype("<f4").tobytes())
    parts.append(struct.pack("<H", len(labels)))
    parts.append(np.where(mask, labels, 0.0).astype("<f4").tobytes())
    parts.append(np.packbits(mask, bitorder="little").tobytes())
    return b"".join(parts)


def write_records(path, graphs: Sequence[GraphTensor], labels=None, masks=None,
                  cfg: Optional[FeatureConfig] = None) -> int:
    """Write an MGRF file; returns the number of records written."""
    cfg = cfg or FeatureConfig()
    n = len(graphs)
    if labels is None:
        labels = np.zeros((n, 0))
    if masks is None:
        masks = np.ones(np.shape(labels), dtype=bool)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, cfg.digest(), n))
        for g, y, m in zip(graphs, labels, masks):
            fh.write(_encode_record(g, y, m, cfg))
    return n


class _Reader:
    def __init__(self, fh, record_start: int):
        self.fh = fh
        self.record_start = record_start

    def take(self, nbytes: int) -> bytes:
        data = self.fh.read(nbytes)
        if len(data) != nbytes:
            raise TruncatedRecord(
                self.record_start,
                f"record starting at byte {self.record_start} is truncated: wanted {nbytes} bytes "
                f"at offset {self.fh.tell() - len(data)}, got {len(data)}")
        return data


def read_header(fh, cfg: Optional[FeatureConfig] = None) -> int:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise CorruptRecordFile("file is shorter than the MGRF header")
    magic, version, digest, count = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CorruptRecordFile(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptRecordFile(f"unsupported MGRF version {version}")
    if cfg is not None and digest != cfg.digest():
        raise DigestMismatch("record file was written with a different feature configuration")
    return count


def read_records(path, cfg: Optional[FeatureConfig] = None) -> Iterator[tuple]:
    """Stream (GraphTensor, labels, mask) triples, one record in memory at a time."""
    cfg = cfg or FeatureConfig()
    with open(path, "rb") as fh:
        count = read_header(fh, cfg)
        for _ in range(count):
            r = _Reader(fh, fh.tell())
            nodes, edges, flags = _RECORD_HEAD.unpack(r.take(_RECORD_HEAD.size))
            x = np.frombuffer(r.take(4 * nodes * cfg.atom_dim), "<f4").reshape(nodes, cfg.atom_dim)
            src = np.frombuffer(r.take(4 * edges), "<u4")
            dst = np.frombuffer(r.take(4 * edges), "<u4")
            ef = ew = None
            if flags & FLAG_EDGE_FEATURE:
                ef = np.frombuffer(r.take(4 * edges * cfg.bond_dim), "<f4").reshape(edges, cfg.bond_dim)
            if flags & FLAG_EDGE_WEIGHT:
                ew = np.frombuffer(r.take(4 * edges), "<f4")
            (k,) = struct.unpack("<H", r.take(2))
            y = np.frombuffer(r.take(4 * k), "<f4").astype(np.float64)
            bits = np.frombuffer(r.take((k + 7) // 8), np.uint8)
            m = np.unpackbits(bits, bitorder="little")[:k].astype(bool)
            try:
                g = GraphTensor(sizes=np.array([nodes]), node_feature=x, edge_src=src, edge_dst=dst,
                                edge_feature=ef, edge_weight=ew)
            except MolGnnError as exc:
                raise CorruptRecordFile(f"record at byte {r.record_start} is invalid: {exc}") from exc
            yield g, y, m
        if fh.read(1):
            raise CorruptRecordFile(f"trailing bytes after {count} records")


def load_records(path, cfg: Optional[FeatureConfig] = None) -> GraphDataset:
    graphs, labels, masks = [], [], []
    for g, y, m in read_records(path, cfg):
        graphs.append(g)
        labels.append(y)
        masks.append(m)
    k = len(labels[0]) if labels else 0
    return GraphDataset(graphs, np.array(labels).reshape(len(graphs), k),
                        np.array(masks, dtype=bool).reshape(len(graphs), k))
