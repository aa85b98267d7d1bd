"""Graph layers, readout, dense head and the sequential :class:`GnnModel`.

Layers read node embeddings as tape tensors and the graph structure as plain
index arrays, so every parameter (and the input features, for saliency)
gets gradients from a single backward pass.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import LayoutMismatch, MissingEdgeFeature, ModelConfigError, WidthMismatch
from .featurize import FeatureConfig
from .graph import GraphTensor
from .rng import stream

GRAPH_KINDS = ("gcn", "gin", "gat", "gat_e", "mpnn_e")
LAYER_KINDS = GRAPH_KINDS + ("dense", "readout")
TASKS = ("regression", "binary_classification")
CHECKPOINT_FORMAT = "molgnn-checkpoint"
CHECKPOINT_VERSION = 1
BN_MOMENTUM = 0.99
BN_EPSILON = 1e-3


def activate(x: ad.Tensor, name: Optional[str]) -> ad.Tensor:
    if name in (None, "linear", "identity", "none"):
        return x
    if name == "relu":
        return ad.relu(x)
    if name == "leaky_relu":
        return ad.leaky_relu(x, 0.2)
    if name == "sigmoid":
        return ad.sigmoid(x)
    if name == "tanh":
        return ad.tanh(x)
    raise ModelConfigError(f"unknown activation {name!r}")


@dataclass
class LayerConfig:
    kind: str
    units: int = 0
    activation: str = "relu"
    heads: int = 1
    use_edge_features: bool = False
    residual: bool = True
    normalization: str = "none"
    merge_heads: str = "concat"
    mode: str = "sum"
    use_bias: bool = True
    self_loops: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ModelConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("gat_e", "mpnn_e"):
            self.use_edge_features = True
        if self.heads < 1:
            raise ModelConfigError("heads must be >= 1")
        if self.kind in ("gat", "gat_e") and self.merge_heads == "concat" and self.units % self.heads:
            raise ModelConfigError("units must be divisible by heads for concatenated attention")
        if self.merge_heads not in ("concat", "mean"):
            raise ModelConfigError(f"merge_heads must be concat or mean, got {self.merge_heads!r}")
        if self.normalization not in ("none", "batch"):
            raise ModelConfigError(f"unknown normalization {self.normalization!r}")
        if self.kind == "readout" and self.mode not in ("sum", "mean", "max"):
            raise ModelConfigError(f"unknown readout mode {self.mode!r}")
        if self.kind not in ("readout",) and self.units < 1:
            raise ModelConfigError(f"{self.kind} layer needs units >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LayerConfig":
        allowed = set(cls.__dataclass_fields__)
        extra = set(data) - allowed
        if extra:
            raise ModelConfigError(f"unknown layer keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class GraphContext:
    """Index arrays shared by all graph layers for one forward pass."""

    src: np.ndarray
    dst: np.ndarray
    num_nodes: int
    graph_ids: np.ndarray
    num_graphs: int
    sizes: np.ndarray
    edge_feature: Optional[np.ndarray] = None
    edge_weight: Optional[np.ndarray] = None

    @classmethod
    def from_graph(cls, g: GraphTensor) -> "GraphContext":
        return cls(g.edge_src, g.edge_dst, g.num_nodes, g.graph_indicator, g.num_subgraphs,
                   g.sizes, g.edge_feature, g.edge_weight)

    def with_self_loops(self):
        """(src, dst, weight, edge features) with one (i, i) edge appended per node."""
        loop = np.arange(self.num_nodes, dtype=np.int64)
        src = np.concatenate([self.src, loop])
        dst = np.concatenate([self.dst, loop])
        w = self.edge_weight if self.edge_weight is not None else np.ones(len(self.src))
        w = np.concatenate([w, np.ones(self.num_nodes)])
        ef = None
        if self.edge_feature is not None:
            ef = np.concatenate([self.edge_feature,
                                 np.zeros((self.num_nodes, self.edge_feature.shape[1]))])
        return src, dst, w, ef


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


# ---------------------------------------------------------------- layers

class Layer:
    def __init__(self, cfg: LayerConfig):
        self.cfg = cfg
        self.in_dim = 0
        self.out_dim = 0

    def build(self, in_dim: int, edge_dim: int, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def forward(self, h, p: dict, ctx: GraphContext, training: bool, state: dict):
        raise NotImplementedError


class _GraphLayer(Layer):
    """Shared tail: bias, optional batch norm, activation, residual."""

    def _build_tail(self, params: dict, in_dim: int, rng) -> None:
        c = self.cfg
        if c.use_bias:
            params["bias"] = np.zeros(self.out_dim)
        if c.normalization == "batch":
            params["bn_gamma"] = np.ones(self.out_dim)
            params["bn_beta"] = np.zeros(self.out_dim)
        if c.residual and in_dim != self.out_dim:
            params["residual_kernel"] = glorot(rng, in_dim, self.out_dim)

    def initial_state(self) -> dict:
        if self.cfg.normalization == "batch":
            return {"bn_mean": np.zeros(self.out_dim), "bn_var": np.ones(self.out_dim)}
        return {}

    def _tail(self, z, h_in, p, training, state):
        c = self.cfg
        if c.use_bias:
            z = ad.add(z, p["bias"])
        if c.normalization == "batch":
            z = batch_norm(z, p["bn_gamma"], p["bn_beta"], state, training)
        z = activate(z, c.activation)
        if c.residual:
            skip = ad.matmul(h_in, p["residual_kernel"]) if "residual_kernel" in p else h_in
            z = ad.add(z, skip)
        return z


def batch_norm(x, gamma, beta, state: dict, training: bool):
    if training and x.shape[0] > 1:
        mu = ad.mean(x, axis=0)
        xc = ad.sub(x, mu)
        var = ad.mean(ad.mul(xc, xc), axis=0)
        state["bn_mean"] = BN_MOMENTUM * state["bn_mean"] + (1 - BN_MOMENTUM) * mu.data
        state["bn_var"] = BN_MOMENTUM * state["bn_var"] + (1 - BN_MOMENTUM) * var.data
        inv = ad.power(ad.add(var, np.full(var.shape, BN_EPSILON)), -0.5)
        xhat = ad.mul(xc, inv)
    else:
        inv = 1.0 / np.sqrt(state["bn_var"] + BN_EPSILON)
        xhat = ad.mul(ad.sub(x, state["bn_mean"]), inv)
    return ad.add(ad.mul(xhat, gamma), beta)


class GCNLayer(_GraphLayer):
    """h_i' = act(sum_j c_ij W h_j) with c_ij = w_ij / sqrt(deg_i deg_j) over self-looped edges."""

    def build(self, in_dim, edge_dim, rng):
        self.in_dim, self.out_dim = in_dim, self.cfg.units
        params = {"kernel": glorot(rng, in_dim, self.out_dim)}
        self._build_tail(params, in_dim, rng)
        return params

    def coefficients(self, ctx: GraphContext):
        if self.cfg.self_loops:
            src, dst, w, _ = ctx.with_self_loops()
        else:
            src, dst = ctx.src, ctx.dst
            w = ctx.edge_weight if ctx.edge_weight is not None else np.ones(len(src))
        deg = np.zeros(ctx.num_nodes)
        np.add.at(deg, dst, w)
        safe = np.where(deg > 0, deg, 1.0)
        coef = w / np.sqrt(safe[src] * safe[dst])
        return src, dst, coef

    def forward(self, h, p, ctx, training, state):
        src, dst, coef = self.coefficients(ctx)
        xw = ad.matmul(h, p["kernel"])
        msgs = ad.mul(ad.gather_rows(xw, src), coef.reshape(-1, 1))
        z = ad.segment_sum(msgs, dst, ctx.num_nodes)
        return self._tail(z, h, p, training, state)


class GINLayer(_GraphLayer):
    """h_i' = MLP((1 + eps) h_i + sum_j h_j), a two-layer MLP with the layer activation."""

    def build(self, in_dim, edge_dim, rng):
        u = self.cfg.units
        self.in_dim, self.out_dim = in_dim, u
        params = {
            "eps": np.zeros(1),
            "kernel_1": glorot(rng, in_dim, u),
            "bias_1": np.zeros(u),
            "kernel_2": glorot(rng, u, u),
        }
        self._build_tail(params, in_dim, rng)
        return params

    def forward(self, h, p, ctx, training, state):
        msgs = ad.gather_rows(h, ctx.src)
        if ctx.edge_weight is not None:
            msgs = ad.mul(msgs, ctx.edge_weight.reshape(-1, 1))
        agg = ad.segment_sum(msgs, ctx.dst, ctx.num_nodes)
        pre = ad.add(ad.add(h, ad.mul(h, p["eps"])), agg)
        z = activate(ad.add(ad.matmul(pre, p["kernel_1"]), p["bias_1"]), self.cfg.activation)
        z = ad.matmul(z, p["kernel_2"])
        return self._tail(z, h, p, training, state)


class GATLayer(_GraphLayer):
    """Multi-head attention; edge features (when used) enter the attention logits only."""

    def build(self, in_dim, edge_dim, rng):
        c = self.cfg
        if c.use_edge_features and edge_dim == 0:
            raise MissingEdgeFeature(f"{c.kind} needs edge features")
        self.heads = c.heads
        self.head_dim = c.units // c.heads if c.merge_heads == "concat" else c.units
        hf = self.heads * self.head_dim
        self.in_dim = in_dim
        self.out_dim = hf if c.merge_heads == "concat" else self.head_dim
        params = {
            "kernel": glorot(rng, in_dim, hf),
            "attn_src": glorot(rng, self.head_dim, 1, shape=(hf,)),
            "attn_dst": glorot(rng, self.head_dim, 1, shape=(hf,)),
        }
        if c.use_edge_features:
            params["edge_kernel"] = glorot(rng, edge_dim, hf)
            params["attn_edge"] = glorot(rng, self.head_dim, 1, shape=(hf,))
        self._build_tail(params, in_dim, rng)
        # head block indicator: column k*F..(k+1)*F belongs to head k
        self.blocks = np.kron(np.eye(self.heads), np.ones((self.head_dim, 1)))
        return params

    def attention(self, h, p, ctx):
        """Returns (alpha (E', heads), projected nodes, src, dst) over self-looped edges."""
        if self.cfg.use_edge_features and ctx.edge_feature is None:
            raise MissingEdgeFeature(f"{self.cfg.kind} layer needs edge_feature")
        if self.cfg.self_loops:
            src, dst, w, ef = ctx.with_self_loops()
        else:
            src, dst, ef = ctx.src, ctx.dst, ctx.edge_feature
        wh = ad.matmul(h, p["kernel"])
        s_src = ad.matmul(ad.mul(wh, p["attn_src"]), self.blocks)
        s_dst = ad.matmul(ad.mul(wh, p["attn_dst"]), self.blocks)
        logits = ad.add(ad.gather_rows(s_dst, dst), ad.gather_rows(s_src, src))
        if self.cfg.use_edge_features:
            we = ad.matmul(ad.as_tensor(ef), p["edge_kernel"])
            logits = ad.add(logits, ad.matmul(ad.mul(we, p["attn_edge"]), self.blocks))
        logits = ad.leaky_relu(logits, 0.2)
        alpha = ad.segment_softmax(logits, dst, ctx.num_nodes)
        return alpha, wh, src, dst

    def forward(self, h, p, ctx, training, state):
        alpha, wh, src, dst = self.attention(h, p, ctx)
        msgs = ad.mul(ad.gather_rows(wh, src), ad.matmul(alpha, self.blocks.T))
        z = ad.segment_sum(msgs, dst, ctx.num_nodes)
        if self.cfg.merge_heads == "mean":
            z = ad.matmul(z, np.kron(np.ones((self.heads, 1)), np.eye(self.head_dim)) / self.heads)
        return self._tail(z, h, p, training, state)


class MPNNLayer(_GraphLayer):
    """m_ij = act(W_m [h_i | h_j | e_ij]); h_i' = act(W_u [h_i | sum_j m_ij])."""

    def build(self, in_dim, edge_dim, rng):
        if edge_dim == 0:
            raise MissingEdgeFeature("mpnn_e needs edge features")
        u = self.cfg.units
        self.in_dim, self.out_dim = in_dim, u
        params = {
            "message_kernel": glorot(rng, 2 * in_dim + edge_dim, u),
            "message_bias": np.zeros(u),
            "update_kernel": glorot(rng, in_dim + u, u),
        }
        self._build_tail(params, in_dim, rng)
        return params

    def forward(self, h, p, ctx, training, state):
        if ctx.edge_feature is None:
            raise MissingEdgeFeature("mpnn_e layer needs edge_feature")
        pair = ad.concat([ad.gather_rows(h, ctx.dst), ad.gather_rows(h, ctx.src),
                          ad.as_tensor(ctx.edge_feature)])
        msgs = activate(ad.add(ad.matmul(pair, p["message_kernel"]), p["message_bias"]),
                        self.cfg.activation)
        if ctx.edge_weight is not None:
            msgs = ad.mul(msgs, ctx.edge_weight.reshape(-1, 1))
        agg = ad.segment_sum(msgs, ctx.dst, ctx.num_nodes)
        z = ad.matmul(ad.concat([h, agg]), p["update_kernel"])
        return self._tail(z, h, p, training, state)


class DenseLayer(Layer):
    def build(self, in_dim, edge_dim, rng):
        self.in_dim, self.out_dim = in_dim, self.cfg.units
        params = {"kernel": glorot(rng, in_dim, self.out_dim)}
        if self.cfg.use_bias:
            params["bias"] = np.zeros(self.out_dim)
        return params

    def initial_state(self):
        return {}

    def forward(self, h, p, ctx, training, state):
        z = ad.matmul(h, p["kernel"])
        if self.cfg.use_bias:
            z = ad.add(z, p["bias"])
        return activate(z, self.cfg.activation)


class ReadoutLayer(Layer):
    def build(self, in_dim, edge_dim, rng):
        self.in_dim = self.out_dim = in_dim
        return {}

    def initial_state(self):
        return {}

    def forward(self, h, p, ctx, training, state):
        return readout_tensor(h, ctx.graph_ids, ctx.num_graphs, ctx.sizes, self.cfg.mode)


def readout_tensor(h, graph_ids, num_graphs, sizes, mode="sum"):
    if mode == "sum":
        return ad.segment_sum(h, graph_ids, num_graphs)
    if mode == "mean":
        inv = np.where(sizes > 0, 1.0 / np.maximum(sizes, 1), 0.0).reshape(-1, 1)
        return ad.mul(ad.segment_sum(h, graph_ids, num_graphs), inv)
    if mode == "max":
        return ad.segment_max(h, graph_ids, num_graphs)
    raise ModelConfigError(f"unknown readout mode {mode!r}")


def readout(g: GraphTensor, mode: str = "sum") -> np.ndarray:
    """Per-subgraph reduction of ``g.node_feature`` (num_subgraphs x D)."""
    return readout_tensor(ad.Tensor(g.node_feature), g.graph_indicator, g.num_subgraphs,
                          g.sizes, mode).data


_LAYER_CLASSES = {
    "gcn": GCNLayer, "gin": GINLayer, "gat": GATLayer, "gat_e": GATLayer,
    "mpnn_e": MPNNLayer, "dense": DenseLayer, "readout": ReadoutLayer,
}


def make_layer(cfg: LayerConfig) -> Layer:
    return _LAYER_CLASSES[cfg.kind](cfg)


# ----------------------------------------------------------------- model

class GnnModel:
    """Graph layers, exactly one readout, then dense layers.

    ``params`` maps ``"{index:02d}.{kind}.{name}"`` to trainable arrays;
    ``state`` holds non-trainable batch-norm running statistics.
    """

    def __init__(self, layers, feature_config: Optional[FeatureConfig] = None,
                 task: str = "regression", seed: int = 0,
                 target_mean=None, target_std=None):
        self.layer_configs = [l if isinstance(l, LayerConfig) else LayerConfig.from_dict(l)
                              for l in layers]
        self.feature_config = feature_config or FeatureConfig()
        if task not in TASKS:
            raise ModelConfigError(f"unknown task {task!r}")
        self.task = task
        self.seed = int(seed)
        self._validate_order()
        self.layers = [make_layer(c) for c in self.layer_configs]
        self.node_dim = self.feature_config.atom_dim
        self.edge_dim = self.feature_config.bond_dim if self.feature_config.include_edge_features else 0
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        rng = stream(self.seed, "init")
        dim = self.node_dim
        for i, layer in enumerate(self.layers):
            if layer.cfg.kind in GRAPH_KINDS and layer.cfg.use_edge_features and self.edge_dim == 0:
                raise MissingEdgeFeature(
                    f"layer {i} ({layer.cfg.kind}) needs edge features but the feature config "
                    "disables them")
            for name, value in layer.build(dim, self.edge_dim, rng).items():
                self.params[self._key(i, name)] = value
            for name, value in layer.initial_state().items():
                self.state[self._key(i, name)] = value
            dim = layer.out_dim
        self.num_outputs = dim
        self.target_mean = np.zeros(dim) if target_mean is None else np.asarray(target_mean, float).reshape(dim)
        self.target_std = np.ones(dim) if target_std is None else np.asarray(target_std, float).reshape(dim)

    def _key(self, i: int, name: str) -> str:
        return f"{i:02d}.{self.layer_configs[i].kind}.{name}"

    def _validate_order(self):
        kinds = [c.kind for c in self.layer_configs]
        if kinds.count("readout") != 1:
            raise ModelConfigError("a model needs exactly one readout layer")
        r = kinds.index("readout")
        if any(k not in GRAPH_KINDS for k in kinds[:r]):
            raise ModelConfigError("only graph layers may precede the readout")
        if any(k != "dense" for k in kinds[r + 1:]):
            raise ModelConfigError("only dense layers may follow the readout")
        if r + 1 == len(kinds):
            raise ModelConfigError("a dense output layer must follow the readout")

    @property
    def readout_index(self) -> int:
        return [c.kind for c in self.layer_configs].index("readout")

    @property
    def graph_layer_indices(self) -> list[int]:
        return list(range(self.readout_index))

    @classmethod
    def standard(cls, kind: str = "gcn", units: int = 128, depth: int = 2,
                 dense_units=(128,), num_outputs: int = 1, feature_config=None,
                 task: str = "regression", seed: int = 0, readout_mode: str = "sum",
                 activation: str = "relu", normalization: str = "none", heads: int = 1,
                 residual: bool = True) -> "GnnModel":
        layers = [LayerConfig(kind=kind, units=units, activation=activation, heads=heads,
                              normalization=normalization, residual=residual)
                  for _ in range(depth)]
        layers.append(LayerConfig(kind="readout", mode=readout_mode))
        layers += [LayerConfig(kind="dense", units=u, activation=activation) for u in dense_units]
        layers.append(LayerConfig(kind="dense", units=num_outputs, activation="linear"))
        return cls(layers, feature_config, task, seed)

    # -- forward

    def check_layout(self, g: GraphTensor) -> None:
        if g.node_feature.shape[1] != self.node_dim:
            raise LayoutMismatch(
                f"graph has {g.node_feature.shape[1]} node features, model expects {self.node_dim}")
        if self.edge_dim and g.edge_feature is not None and g.edge_feature.shape[1] != self.edge_dim:
            raise LayoutMismatch(
                f"graph has {g.edge_feature.shape[1]} edge features, model expects {self.edge_dim}")

    def bind(self, tape: Optional[ad.Tape]) -> dict:
        """Parameters as tape variables (or constants when tape is None)."""
        if tape is None:
            return {k: ad.Tensor(v) for k, v in self.params.items()}
        return {k: tape.variable(v, name=k) for k, v in self.params.items()}

    def forward(self, g: GraphTensor, tape: Optional[ad.Tape] = None, training: bool = False,
                node_input: Optional[ad.Tensor] = None, capture: Optional[dict] = None,
                bound: Optional[dict] = None, stop_at: Optional[int] = None,
                start_at: int = 0) -> ad.Tensor:
        """Run the model; returns (num_subgraphs x num_outputs) predictions.

        ``capture`` (a dict) receives every layer output by index. ``stop_at``
        returns the output of that layer instead of the final prediction;
        ``start_at`` feeds ``node_input`` into that layer, skipping earlier ones.
        """
        self.check_layout(g)
        ctx = GraphContext.from_graph(g)
        bound = bound if bound is not None else self.bind(tape)
        h = node_input if node_input is not None else ad.Tensor(g.node_feature)
        for i, layer in enumerate(self.layers):
            if i < start_at:
                continue
            p = {k.split(".", 2)[2]: v for k, v in bound.items() if k.startswith(f"{i:02d}.")}
            state = {k.split(".", 2)[2]: v for k, v in self.state.items() if k.startswith(f"{i:02d}.")}
            h = layer.forward(h, p, ctx, training, state)
            for k, v in state.items():
                self.state[self._key(i, k)] = v
            if capture is not None:
                capture[i] = h
            if stop_at is not None and i == stop_at:
                return h
        if not (np.all(self.target_std == 1.0) and np.all(self.target_mean == 0.0)):
            h = ad.add(ad.mul(h, self.target_std), self.target_mean)
        return h

    def predict(self, g: GraphTensor) -> np.ndarray:
        """Raw outputs: regression values or classification logits."""
        return self.forward(g).data.copy()

    # -- parameter management

    def get_weights(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_weights(self, weights: dict) -> None:
        for k, v in weights.items():
            if k not in self.params:
                raise ModelConfigError(f"unknown parameter {k!r}")
            if self.params[k].shape != np.shape(v):
                raise WidthMismatch(f"{k}: expected shape {self.params[k].shape}, got {np.shape(v)}")
            self.params[k] = np.array(v, dtype=np.float64, copy=True)

    def snapshot(self) -> tuple[dict, dict]:
        return self.get_weights(), {k: v.copy() for k, v in self.state.items()}

    def restore(self, snap: tuple[dict, dict]) -> None:
        weights, state = snap
        self.set_weights(weights)
        self.state = {k: v.copy() for k, v in state.items()}

    def core_weights(self) -> dict:
        idx = set(self.graph_layer_indices)
        return {k: v.copy() for k, v in self.params.items() if int(k[:2]) in idx}

    # -- serialization

    def manifest(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "task": self.task,
            "seed": self.seed,
            "layers": [c.to_dict() for c in self.layer_configs],
            "feature_config": self.feature_config.to_dict(),
            "target_mean": [float(x) for x in self.target_mean],
            "target_std": [float(x) for x in self.target_std],
            "params": {k: list(v.shape) for k, v in sorted(self.params.items())},
            "state": {k: list(v.shape) for k, v in sorted(self.state.items())},
        }

    def save(self, path) -> None:
        """Zip archive: manifest.json plus little-endian float64 blobs per array.

        Entry timestamps are pinned so identical models give identical bytes.
        """
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
            _write_entry(zf, "manifest.json",
                         json.dumps(self.manifest(), indent=2, sort_keys=True).encode("utf-8"))
            for prefix, arrays in (("params", self.params), ("state", self.state)):
                for k in sorted(arrays):
                    _write_entry(zf, f"{prefix}/{k}.f64", arrays[k].astype("<f8").tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "GnnModel":
        with zipfile.ZipFile(path) as zf:
            man = json.loads(zf.read("manifest.json"))
            if man.get("format") != CHECKPOINT_FORMAT:
                raise ModelConfigError(f"{path} is not a molgnn checkpoint")
            model = cls(man["layers"], FeatureConfig.from_dict(man["feature_config"]),
                        man["task"], man["seed"], man["target_mean"], man["target_std"])
            for prefix, shapes, target in (("params", man["params"], model.params),
                                           ("state", man["state"], model.state)):
                if set(shapes) != set(target):
                    raise ModelConfigError(f"checkpoint {prefix} do not match the architecture")
                for k, shape in shapes.items():
                    raw = zf.read(f"{prefix}/{k}.f64")
                    target[k] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        return model


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)
