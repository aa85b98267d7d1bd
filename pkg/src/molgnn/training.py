"""Losses, metrics, Adam, plateau scheduling, the fit loop and masked-node pretraining."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .dataset import GraphDataset
from .errors import ConfigError, EmptyMask, NonFiniteLoss, ShapeMismatch, SingleClassTask
from .graph import merge
from .layers import GnnModel, glorot
from .rng import stream

LOSSES = ("bce", "mae", "mse_rmse", "huber")
METRICS = ("rmse", "mae", "mre", "roc_auc", "prc_auc")
MRE_EPSILON = 1e-8


# ------------------------------------------------------------------ losses

def _prepare(pred, target, mask):
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    mask = np.ones(pred.shape, bool) if mask is None else np.asarray(mask, bool).reshape(pred.shape)
    count = int(mask.sum())
    if count == 0:
        raise EmptyMask("no labelled entries under the mask")
    return pred, np.where(mask, target, 0.0), mask.astype(np.float64) / count


def loss(kind: str, pred, target, mask=None, delta: float = 1.0) -> ad.Tensor:
    """Mean loss over masked entries, as a 1-element tensor.

    ``mse_rmse`` returns the mean squared error (use :func:`report_loss` for
    the root); ``bce`` takes logits.
    """
    pred, target, weight = _prepare(pred, target, mask)
    if kind == "bce":
        # softplus(x) - x*y == -y log sigmoid(x) - (1-y) log(1 - sigmoid(x))
        per = ad.sub(ad.softplus(pred), ad.mul(pred, target))
    elif kind == "mae":
        per = ad.abs(ad.sub(pred, target))
    elif kind == "mse_rmse":
        d = ad.sub(pred, target)
        per = ad.mul(d, d)
    elif kind == "huber":
        per = ad.huber(ad.sub(pred, target), delta)
    else:
        raise ConfigError(f"unknown loss {kind!r}")
    return ad.sum(ad.mul(per, weight))


def report_loss(kind: str, value: float) -> float:
    return math.sqrt(max(value, 0.0)) if kind == "mse_rmse" else float(value)


def loss_value(kind: str, pred, target, mask=None, delta: float = 1.0) -> float:
    return report_loss(kind, loss(kind, np.asarray(pred, float), target, mask, delta).item())


# ----------------------------------------------------------------- metrics

def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc_single(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target) > 0.5
    npos, nneg = int(target.sum()), int((~target).sum())
    if npos == 0 or nneg == 0:
        raise SingleClassTask("roc_auc needs both classes")
    u = _midranks(pred)[target].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def average_precision_single(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target) > 0.5
    npos = int(target.sum())
    if npos == 0 or npos == len(target):
        raise SingleClassTask("prc_auc needs both classes")
    order = np.argsort(-pred, kind="mergesort")
    p, t = pred[order], target[order]
    tp = np.cumsum(t)
    # evaluate only at the last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(p)), len(p) - 1]
    precision = tp[last] / (last + 1)
    recall = tp[last] / npos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def metric(kind: str, pred, target, mask=None, skipped: Optional[list] = None) -> float:
    """Metric averaged over tasks (columns).

    Classification tasks with a single class present are excluded from the
    average and their column indices appended to ``skipped``.
    """
    pred = np.asarray(pred, float)
    if pred.ndim == 1:
        pred = pred.reshape(-1, 1)
    target = np.asarray(target, float).reshape(pred.shape)
    mask = np.ones(pred.shape, bool) if mask is None else np.asarray(mask, bool).reshape(pred.shape)
    if not mask.any():
        raise EmptyMask("no labelled entries under the mask")
    if kind in ("rmse", "mae", "mre"):
        d = (pred - target)[mask]
        if kind == "rmse":
            return float(np.sqrt(np.mean(d ** 2)))
        if kind == "mae":
            return float(np.mean(np.abs(d)))
        return float(np.mean(np.abs(d) / np.maximum(np.abs(target[mask]), MRE_EPSILON)))
    if kind not in ("roc_auc", "prc_auc"):
        raise ConfigError(f"unknown metric {kind!r}")
    fn = roc_auc_single if kind == "roc_auc" else average_precision_single
    values, bad = [], []
    for k in range(pred.shape[1]):
        m = mask[:, k]
        try:
            values.append(fn(pred[m, k], target[m, k]))
        except SingleClassTask:
            bad.append(k)
    if skipped is not None:
        skipped.extend(bad)
    if not values:
        raise SingleClassTask(f"{kind}: every task has a single class")
    return float(np.mean(values))


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    lr: float
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: OptimizerState, grads: dict, params: dict,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; replaces the arrays in ``params``."""
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        params[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + eps)


class PlateauScheduler:
    """Validation-loss monitor: decays lr on plateaus and signals early stop.

    An epoch improves when its loss is below the best so far by at least
    ``min_delta``. After ``plateau_patience`` consecutive non-improving epochs
    the lr is multiplied by ``factor`` (floored at ``lr_end``) and the plateau
    counter resets; after ``stop_patience`` the run stops. When both fire in
    the same epoch, stopping wins and the lr is left alone.
    """

    def __init__(self, lr_start: float, lr_end: float = 1e-6, plateau_patience: int = 10,
                 factor: float = 0.1, stop_patience: int = 20, min_delta: float = 1e-6):
        self.lr = lr_start
        self.lr_end = lr_end
        self.plateau_patience = plateau_patience
        self.factor = factor
        self.stop_patience = stop_patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.plateau_wait = 0
        self.stop_wait = 0
        self.decay_epochs: list[int] = []
        self.stopped_epoch: Optional[int] = None

    def step(self, epoch: int, val_loss: float) -> tuple[bool, bool]:
        """Record one epoch; returns (improved, stop)."""
        if val_loss < self.best - self.min_delta:
            self.best, self.best_epoch = val_loss, epoch
            self.plateau_wait = self.stop_wait = 0
            return True, False
        self.plateau_wait += 1
        self.stop_wait += 1
        if self.stop_wait >= self.stop_patience:
            self.stopped_epoch = epoch
            return False, True
        if self.plateau_wait >= self.plateau_patience:
            self.plateau_wait = 0
            # relative slack: repeated factor products drift just above lr_end
            if self.lr > self.lr_end * (1 + 1e-9):
                new = self.lr * self.factor
                self.lr = self.lr_end if new <= self.lr_end * (1 + 1e-9) else new
                self.decay_epochs.append(epoch)
        return False, False


# ------------------------------------------------------------------ fitting

@dataclass
class TrainConfig:
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    early_stop_patience: int = 20
    min_delta: float = 1e-6
    loss: str = "mse_rmse"
    huber_delta: float = 1.0
    batch_size: int = 32
    max_epochs: int = 300
    seed: int = 0
    standardize_targets: bool = True

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not 0 < self.lr_end <= self.lr_start:
            raise ConfigError("need 0 < lr_end <= lr_start")
        if min(self.plateau_patience, self.early_stop_patience, self.batch_size, self.max_epochs) < 1:
            raise ConfigError("patiences, batch_size and max_epochs must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown training keys: {sorted(extra)}")
        return cls(**data)


@dataclass
class History:
    rows: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss, lr
    best_epoch: int = 0
    best_val_loss: float = math.inf
    decay_epochs: list = field(default_factory=list)
    stopped_epoch: Optional[int] = None
    seconds: float = 0.0

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for r in self.rows:
                w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_loss"]), repr(r["lr"])])


def dataset_loss(model: GnnModel, data: GraphDataset, cfg: TrainConfig, batch_size: int = 256) -> float:
    """Reported loss over a whole dataset (deterministic, inference mode)."""
    pred = predict_dataset(model, data, batch_size)
    return loss_value(cfg.loss, pred, data.labels, data.mask, cfg.huber_delta)


def predict_dataset(model: GnnModel, data: GraphDataset, batch_size: int = 256) -> np.ndarray:
    out = [model.predict(g) for g, _, _ in data.batches(batch_size)]
    return np.vstack(out)


def _set_target_scaling(model: GnnModel, data: GraphDataset) -> None:
    mean = np.zeros(data.num_tasks)
    std = np.ones(data.num_tasks)
    for k in range(data.num_tasks):
        y = data.labels[data.mask[:, k], k]
        if len(y):
            mean[k] = y.mean()
            std[k] = y.std() if y.std() > 0 else 1.0
    model.target_mean, model.target_std = mean, std


def fit(model: GnnModel, train: GraphDataset, val: GraphDataset, cfg: Optional[TrainConfig] = None,
        log: Optional[Callable[[str], None]] = None) -> History:
    """Adam training with plateau decay, early stopping and best-weight restore."""
    cfg = cfg or TrainConfig()
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    if model.num_outputs != train.num_tasks:
        raise ShapeMismatch(f"model has {model.num_outputs} outputs, data has {train.num_tasks} tasks")
    if model.task == "regression" and cfg.standardize_targets:
        _set_target_scaling(model, train)
    rng = stream(cfg.seed, "shuffle")
    opt = OptimizerState(lr=cfg.lr_start)
    sched = PlateauScheduler(cfg.lr_start, cfg.lr_end, cfg.plateau_patience, cfg.plateau_factor,
                             cfg.early_stop_patience, cfg.min_delta)
    hist = History()
    best = model.snapshot()
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        lr_used = opt.lr = sched.lr
        total, count = 0.0, 0
        for b, (g, y, m) in enumerate(train.batches(cfg.batch_size, rng)):
            if not m.any():
                continue
            tape = ad.Tape()
            pred = model.forward(g, tape, training=True)
            value = loss(cfg.loss, pred, y, m, cfg.huber_delta)
            if not np.isfinite(value.item()):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}, batch {b} "
                                    f"(lr {opt.lr:g}); predictions range "
                                    f"[{np.nanmin(pred.data):g}, {np.nanmax(pred.data):g}]")
            grads = tape.backward(value)
            adam_step(opt, grads, model.params)
            n = int(m.sum())
            total += value.item() * n
            count += n
        train_loss = report_loss(cfg.loss, total / max(count, 1))
        val_loss = dataset_loss(model, val, cfg)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        improved, stop = sched.step(epoch, val_loss)
        if improved:
            best = model.snapshot()
        hist.rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr_used})
        if log:
            log(f"epoch {epoch:4d}  train {train_loss:.5f}  val {val_loss:.5f}  lr {lr_used:.1e}")
        if stop:
            break
    model.restore(best)
    hist.best_epoch, hist.best_val_loss = sched.best_epoch, sched.best
    hist.decay_epochs, hist.stopped_epoch = list(sched.decay_epochs), sched.stopped_epoch
    hist.seconds = time.perf_counter() - t0
    return hist


def evaluate(model: GnnModel, data: GraphDataset, metrics=None) -> dict:
    """Metrics dict; classification defaults to the AUCs, regression to the error metrics."""
    if metrics is None:
        metrics = (("roc_auc", "prc_auc") if model.task == "binary_classification"
                   else ("rmse", "mae", "mre"))
    pred = predict_dataset(model, data)
    out = {}
    for kind in metrics:
        skipped: list = []
        try:
            out[kind] = metric(kind, pred, data.labels, data.mask, skipped)
        except SingleClassTask:
            out[kind] = None
            skipped = list(range(data.num_tasks))
        if skipped:
            out[f"{kind}_skipped_tasks"] = skipped
    return out


# -------------------------------------------------------------- pretraining

@dataclass
class PretrainResult:
    core: dict
    head_kernel: np.ndarray
    head_bias: np.ndarray
    mask_vector: np.ndarray
    losses: list
    classes: list


def _symbol_targets(g, model: GnnModel) -> np.ndarray:
    sl = model.feature_config.block_slices("atom")["symbol"]
    return np.argmax(g.node_feature[:, sl], axis=1)


def _masked_step(model, bound, head_w, head_b, mask_vec, g, masked, targets):
    """Cross-entropy on masked nodes; returns the loss tensor."""
    keep = (~masked).astype(np.float64).reshape(-1, 1)
    hit = masked.astype(np.float64).reshape(-1, 1)
    x = ad.add(ad.mul(ad.Tensor(g.node_feature), keep), ad.matmul(hit, mask_vec))
    last = model.graph_layer_indices[-1]
    h = model.forward(g, node_input=x, bound=bound, stop_at=last, training=False)
    logp = ad.log_softmax(ad.add(ad.matmul(h, head_w), head_b))
    idx = np.flatnonzero(masked)
    onehot = np.zeros((len(idx), head_b.shape[0]))
    onehot[np.arange(len(idx)), targets[idx]] = 1.0 / len(idx)
    return ad.neg(ad.sum(ad.mul(ad.gather_rows(logp, idx), onehot))), logp


def masked_graph_pretrain(model: GnnModel, graphs, mask_rate: float = 0.15, epochs: int = 20,
                          lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                          log: Optional[Callable[[str], None]] = None) -> PretrainResult:
    """Masked-node symbol recovery on unlabeled graphs using the model's graph layers.

    Each step replaces a ``mask_rate`` fraction of node feature rows by a
    learned mask vector; a linear node head predicts the symbol class of the
    masked atoms. Batches with no masked node are skipped. The trained graph
    layer weights are written back into ``model`` and also returned.
    """
    if not 0 < mask_rate < 1:
        raise ConfigError("mask_rate must lie in (0, 1)")
    graphs = list(graphs)
    classes = model.feature_config.block_width("atom", "symbol")
    width = model.layers[model.graph_layer_indices[-1]].out_dim
    init = stream(seed, "pretrain-init")
    extra = {
        "head.kernel": glorot(init, width, classes),
        "head.bias": np.zeros(classes),
        "mask.vector": np.zeros((1, model.node_dim)),
    }
    core_names = list(model.core_weights())
    params = {**{k: model.params[k] for k in core_names}, **extra}
    opt = OptimizerState(lr=lr)
    shuffle, masker = stream(seed, "pretrain-shuffle"), stream(seed, "mask")
    losses = []
    for epoch in range(1, epochs + 1):
        order = shuffle.permutation(len(graphs))
        total, steps = 0.0, 0
        for start in range(0, len(order), batch_size):
            g = merge([graphs[i] for i in order[start:start + batch_size]])
            masked = masker.random(g.num_nodes) < mask_rate
            if not masked.any():
                continue
            tape = ad.Tape()
            bound = {k: tape.variable(v, name=k) for k, v in params.items()}
            value, _ = _masked_step(model, bound, bound["head.kernel"], bound["head.bias"],
                                    bound["mask.vector"], g, masked, _symbol_targets(g, model))
            adam_step(opt, tape.backward(value), params)
            total += value.item()
            steps += 1
        losses.append(total / max(steps, 1))
        if log:
            log(f"pretrain epoch {epoch:3d}  masked CE {losses[-1]:.4f}")
    model.set_weights({k: params[k] for k in core_names})
    return PretrainResult({k: params[k].copy() for k in core_names}, params["head.kernel"],
                          params["head.bias"], params["mask.vector"], losses,
                          list(model.feature_config.vocabularies["atom.symbol"]) + ["<oov>"])


def masked_accuracy(model: GnnModel, result: PretrainResult, graphs, mask_rate: float = 0.15,
                    seed: int = 1, rounds: int = 1) -> tuple[float, float]:
    """(accuracy, majority-class rate) of symbol recovery on freshly masked nodes.

    ``rounds`` repeats the masking over the whole set with new draws.
    """
    rng = stream(seed, "mask-eval")
    correct = total = 0
    counts = np.zeros(len(result.classes), dtype=np.int64)
    bound = {k: ad.Tensor(v) for k, v in model.params.items()}
    for g in [g for _ in range(rounds) for g in graphs]:
        masked = rng.random(g.num_nodes) < mask_rate
        if not masked.any():
            continue
        targets = _symbol_targets(g, model)
        _, logp = _masked_step(model, bound, ad.Tensor(result.head_kernel), ad.Tensor(result.head_bias),
                               ad.Tensor(result.mask_vector), g, masked, targets)
        guess = np.argmax(logp.data, axis=1)
        correct += int((guess[masked] == targets[masked]).sum())
        total += int(masked.sum())
        np.add.at(counts, targets[masked], 1)
    if total == 0:
        raise EmptyMask("no node was masked")
    return correct / total, counts.max() / total
