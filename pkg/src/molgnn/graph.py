"""Disjoint-batched graph container.

A batch of graphs is stored as one block-diagonal graph: nodes of subgraph
``k`` occupy the contiguous block ``[offset_k, offset_k + sizes[k])`` and no
edge crosses blocks. Edges are directed; undirected bonds appear twice.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import FieldMismatch, ShapeMismatch, RequiredFieldRemoval

REQUIRED_FIELDS = ("sizes", "node_feature", "edge_src", "edge_dst")
NODE_FIELDS = ("node_feature", "node_position")
EDGE_FIELDS = ("edge_src", "edge_dst", "edge_feature", "edge_weight")
OPTIONAL_FIELDS = ("edge_feature", "edge_weight", "node_position")
AGGREGATIONS = ("sum", "mean", "max")


@dataclass(frozen=True, eq=False)
class GraphTensor:
    sizes: np.ndarray
    node_feature: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_feature: Optional[np.ndarray] = None
    edge_weight: Optional[np.ndarray] = None
    node_position: Optional[np.ndarray] = None

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64).reshape(-1)
        nf = np.asarray(self.node_feature, dtype=np.float64)
        if nf.ndim == 1:
            nf = nf.reshape(-1, 1)
        src = np.asarray(self.edge_src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.edge_dst, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "node_feature", nf)
        object.__setattr__(self, "edge_src", src)
        object.__setattr__(self, "edge_dst", dst)
        if self.edge_feature is not None:
            ef = np.asarray(self.edge_feature, dtype=np.float64)
            if ef.ndim == 1:
                ef = ef.reshape(-1, 1)
            object.__setattr__(self, "edge_feature", ef)
        if self.edge_weight is not None:
            object.__setattr__(self, "edge_weight",
                               np.asarray(self.edge_weight, dtype=np.float64).reshape(-1))
        if self.node_position is not None:
            object.__setattr__(self, "node_position",
                               np.asarray(self.node_position, dtype=np.float64))
        self._validate()

    def _validate(self):
        n = self.node_feature.shape[0]
        if int(self.sizes.sum()) != n or (self.sizes < 0).any():
            raise ShapeMismatch(f"sizes sum to {int(self.sizes.sum())} but there are {n} nodes")
        if self.edge_src.shape != self.edge_dst.shape:
            raise ShapeMismatch("edge_src and edge_dst lengths differ")
        e = self.edge_src.shape[0]
        if e and (min(self.edge_src.min(), self.edge_dst.min()) < 0
                  or max(self.edge_src.max(), self.edge_dst.max()) >= n):
            raise ShapeMismatch("edge index out of range")
        if e:
            graph_of = self.graph_indicator
            if (graph_of[self.edge_src] != graph_of[self.edge_dst]).any():
                raise ShapeMismatch("edge crosses subgraph blocks")
        if self.edge_feature is not None and self.edge_feature.shape[0] != e:
            raise ShapeMismatch("edge_feature rows must equal edge count")
        if self.edge_weight is not None and self.edge_weight.shape[0] != e:
            raise ShapeMismatch("edge_weight length must equal edge count")
        if self.node_position is not None and self.node_position.shape[0] != n:
            raise ShapeMismatch("node_position rows must equal node count")

    # -- derived views

    @property
    def num_nodes(self) -> int:
        return self.node_feature.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_src.shape[0]

    @property
    def num_subgraphs(self) -> int:
        return self.sizes.shape[0]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    @property
    def graph_indicator(self) -> np.ndarray:
        """Subgraph index of every node (ascending by construction)."""
        return np.repeat(np.arange(self.num_subgraphs, dtype=np.int64), self.sizes)

    def present_optional_fields(self) -> tuple[str, ...]:
        return tuple(f for f in OPTIONAL_FIELDS if getattr(self, f) is not None)

    def structurally_equal(self, other: "GraphTensor", atol: float = 0.0) -> bool:
        if self.present_optional_fields() != other.present_optional_fields():
            return False
        for f in REQUIRED_FIELDS + self.present_optional_fields():
            a, b = getattr(self, f), getattr(other, f)
            if a.shape != b.shape:
                return False
            if atol == 0.0:
                if not np.array_equal(a, b):
                    return False
            elif not np.allclose(a, b, atol=atol, rtol=0.0):
                return False
        return True

    # -- method forms of the module functions

    def update(self, field_name: str, data) -> "GraphTensor":
        return update(self, field_name, data)

    def remove(self, field_name: str) -> "GraphTensor":
        return remove(self, field_name)

    def separate(self) -> list["GraphTensor"]:
        return separate(self)

    def propagate(self, mode: str = "sum") -> "GraphTensor":
        return propagate(self, mode)


def merge(graphs: Sequence[GraphTensor]) -> GraphTensor:
    """Pack graphs into one disjoint graph, offsetting edge indices."""
    graphs = list(graphs)
    if not graphs:
        raise FieldMismatch("merge needs at least one graph")
    first = graphs[0]
    present = first.present_optional_fields()
    width = first.node_feature.shape[1]
    ewidth = first.edge_feature.shape[1] if first.edge_feature is not None else None
    for g in graphs[1:]:
        if g.present_optional_fields() != present:
            raise FieldMismatch(
                f"optional fields differ: {present} vs {g.present_optional_fields()}"
            )
        if g.node_feature.shape[1] != width:
            raise FieldMismatch("node feature widths differ")
        if ewidth is not None and g.edge_feature.shape[1] != ewidth:
            raise FieldMismatch("edge feature widths differ")

    counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    shift = np.concatenate([[0], np.cumsum(counts)[:-1]])
    kw = dict(
        sizes=np.concatenate([g.sizes for g in graphs]),
        node_feature=np.concatenate([g.node_feature for g in graphs], axis=0),
        edge_src=np.concatenate([g.edge_src + s for g, s in zip(graphs, shift)]),
        edge_dst=np.concatenate([g.edge_dst + s for g, s in zip(graphs, shift)]),
    )
    for f in present:
        kw[f] = np.concatenate([getattr(g, f) for g in graphs], axis=0)
    return GraphTensor(**kw)


def separate(g: GraphTensor) -> list[GraphTensor]:
    """Unpack a disjoint graph into one graph per entry of ``sizes``."""
    out = []
    offsets = g.offsets
    graph_of_edge = g.graph_indicator[g.edge_src] if g.num_edges else np.zeros(0, np.int64)
    present = g.present_optional_fields()
    for k, (start, size) in enumerate(zip(offsets, g.sizes)):
        emask = graph_of_edge == k
        kw = dict(
            sizes=np.array([size]),
            node_feature=g.node_feature[start:start + size],
            edge_src=g.edge_src[emask] - start,
            edge_dst=g.edge_dst[emask] - start,
        )
        for f in present:
            data = getattr(g, f)
            kw[f] = data[start:start + size] if f in NODE_FIELDS else data[emask]
        out.append(GraphTensor(**kw))
    return out


def update(g: GraphTensor, field_name: str, data) -> GraphTensor:
    """Return a copy of ``g`` with ``field_name`` set to ``data`` (added if absent)."""
    if field_name not in REQUIRED_FIELDS + OPTIONAL_FIELDS:
        raise FieldMismatch(f"unknown field {field_name!r}")
    data = np.asarray(data)
    if field_name == "sizes":
        if int(data.sum()) != g.num_nodes:
            raise ShapeMismatch("new sizes must sum to the node count")
    elif field_name in NODE_FIELDS and data.shape[0] != g.num_nodes:
        raise ShapeMismatch(f"{field_name} needs {g.num_nodes} rows, got {data.shape[0]}")
    elif field_name in EDGE_FIELDS and data.shape[0] != g.num_edges:
        raise ShapeMismatch(f"{field_name} needs {g.num_edges} rows, got {data.shape[0]}")
    return dataclasses.replace(g, **{field_name: data})


def remove(g: GraphTensor, field_name: str) -> GraphTensor:
    if field_name in REQUIRED_FIELDS:
        raise RequiredFieldRemoval(f"{field_name} is required and cannot be removed")
    if field_name not in OPTIONAL_FIELDS:
        raise FieldMismatch(f"unknown field {field_name!r}")
    return dataclasses.replace(g, **{field_name: None})


def aggregate(values: np.ndarray, edge_src, edge_dst, num_nodes: int,
              mode: str = "sum", edge_weight=None) -> np.ndarray:
    """out[i] = agg over edges (j -> i) of w_e * values[j]; empty neighbourhoods give 0."""
    if mode not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {mode!r}")
    values = np.asarray(values, dtype=np.float64)
    msgs = values[edge_src]
    if edge_weight is not None:
        msgs = msgs * np.asarray(edge_weight, dtype=np.float64).reshape(-1, *([1] * (msgs.ndim - 1)))
    out_shape = (num_nodes,) + values.shape[1:]
    if mode == "max":
        out = np.full(out_shape, -np.inf)
        np.maximum.at(out, edge_dst, msgs)
        out[np.isneginf(out)] = 0.0
        return out
    out = np.zeros(out_shape)
    np.add.at(out, edge_dst, msgs)
    if mode == "mean":
        counts = np.bincount(edge_dst, minlength=num_nodes).astype(np.float64)
        nz = counts > 0
        out[nz] /= counts[nz].reshape(-1, *([1] * (out.ndim - 1)))
    return out


def propagate(g: GraphTensor, mode: str = "sum") -> GraphTensor:
    """Replace node features by the aggregation of incoming neighbour features."""
    agg = aggregate(g.node_feature, g.edge_src, g.edge_dst, g.num_nodes, mode, g.edge_weight)
    return dataclasses.replace(g, node_feature=agg)


def permute_nodes(g: GraphTensor, perm) -> GraphTensor:
    """Relabel nodes: new node ``k`` is old node ``perm[k]``.

    ``perm`` must map every subgraph block onto itself.
    """
    perm = np.asarray(perm, dtype=np.int64)
    if np.any(g.graph_indicator[perm] != g.graph_indicator):
        raise ShapeMismatch("permutation moves nodes across subgraphs")
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    kw = dict(node_feature=g.node_feature[perm], edge_src=inverse[g.edge_src],
              edge_dst=inverse[g.edge_dst])
    if g.node_position is not None:
        kw["node_position"] = g.node_position[perm]
    return dataclasses.replace(g, **kw)
