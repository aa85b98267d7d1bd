"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every forward op computes its output eagerly and, when any input requires a
gradient, appends a record ``(op, input ids, saved values)`` to the tape of
that input. :meth:`Tape.backward` walks the records once in reverse order.

Broadcasting is limited on purpose: ``add``/``sub`` accept a row vector as
second operand (bias addition) and ``mul`` additionally accepts a scalar or a
column vector. Everything else needs identical shapes.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DisconnectedOutput, NonFiniteValue, ShapeMismatch

_DEBUG = False


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Raise :class:`NonFiniteValue` as soon as any op produces NaN/Inf."""
    global _DEBUG
    prev, _DEBUG = _DEBUG, enabled
    try:
        yield
    finally:
        _DEBUG = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, tape: "Tape | None" = None,
                 node_id: Optional[int] = None, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tape = tape
        self.node_id = node_id
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: int
    saved: dict


@dataclass
class Tape:
    records: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    _count: int = 0
    _grads: Optional[list] = None

    def _new_id(self) -> int:
        self._count += 1
        return self._count - 1

    def variable(self, data, name: Optional[str] = None) -> Tensor:
        """Leaf tensor whose gradient is tracked; named leaves land in ``parameters``."""
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, tape=self,
                   node_id=self._new_id(), name=name)
        if name is not None:
            self.parameters[name] = t
        return t

    def constant(self, data) -> Tensor:
        return Tensor(data)

    def backward(self, output: Tensor) -> dict[str, np.ndarray]:
        """Accumulate gradients of a 1-element output; returns gradients by parameter name."""
        if output.tape is not self or output.node_id is None:
            raise DisconnectedOutput("output was not produced on this tape")
        if output.data.size != 1:
            raise ShapeMismatch(f"backward needs a 1-element output, got shape {output.shape}")
        grads: list = [None] * self._count
        grads[output.node_id] = np.ones_like(output.data)
        for rec in reversed(self.records):
            g = grads[rec.output]
            if g is None:
                continue
            in_grads = _VJPS[rec.op](g, rec.saved)
            for nid, ig in zip(rec.inputs, in_grads):
                if nid is None or ig is None:
                    continue
                if grads[nid] is None:
                    grads[nid] = np.array(ig, dtype=np.float64, copy=True)
                else:
                    grads[nid] += ig
        self._grads = grads
        return {name: self.grad(t) for name, t in self.parameters.items()}

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the last ``backward`` output w.r.t. any tensor on this tape."""
        if self._grads is None:
            raise DisconnectedOutput("backward() has not been run on this tape")
        if tensor.tape is not self or tensor.node_id is None:
            return np.zeros_like(tensor.data)
        g = self._grads[tensor.node_id]
        return np.zeros_like(tensor.data) if g is None else g


# --------------------------------------------------------------- machinery

_VJPS: dict[str, Callable] = {}


def registered_ops() -> list[str]:
    return sorted(_VJPS)


def has_gradient(op_name: str) -> bool:
    return callable(_VJPS.get(op_name))


def _vjp(name: str):
    def deco(fn):
        _VJPS[name] = fn
        return fn
    return deco


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, value: np.ndarray, inputs: Sequence[Tensor], **saved) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"{op} produced a non-finite value")
    tape = None
    for t in inputs:
        if t.requires_grad:
            tape = t.tape
            break
    if tape is None:
        return Tensor(value)
    ids = tuple(t.node_id if (t.requires_grad and t.tape is tape) else None for t in inputs)
    node = tape._new_id()
    tape.records.append(_Record(op, ids, node, saved))
    return Tensor(value, requires_grad=True, tape=tape, node_id=node)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to an operand's (broadcast) shape."""
    if grad.shape == shape:
        return grad
    if len(shape) == 1 and grad.ndim == 2:
        if shape[0] == grad.shape[1]:
            return grad.sum(axis=0)
        return grad.sum().reshape(shape)
    reduced = grad
    for axis, n in enumerate(shape):
        if n == 1 and reduced.shape[axis] != 1:
            reduced = reduced.sum(axis=axis, keepdims=True)
    return reduced.reshape(shape)


def _check_row_broadcast(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return
    if a.data.ndim == 2 and (b.shape == (a.shape[1],) or b.shape == (1, a.shape[1])):
        return
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} are not row-broadcastable")


def _check_mul_broadcast(a: Tensor, b: Tensor):
    if a.shape == b.shape or b.data.size == 1:
        return
    if a.data.ndim == 2:
        n, d = a.shape
        if b.shape in ((d,), (1, d), (n, 1)):
            return
    raise ShapeMismatch(f"mul: shapes {a.shape} and {b.shape} are not broadcastable")


# --------------------------------------------------------------- arithmetic

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _record("matmul", a.data @ b.data, (a, b), a=a.data, b=b.data)


@_vjp("matmul")
def _matmul_vjp(g, s):
    return g @ s["b"].T, s["a"].T @ g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_row_broadcast(a, b, "add")
    return _record("add", a.data + b.data, (a, b), sa=a.shape, sb=b.shape)


@_vjp("add")
def _add_vjp(g, s):
    return _unbroadcast(g, s["sa"]), _unbroadcast(g, s["sb"])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_row_broadcast(a, b, "sub")
    return _record("sub", a.data - b.data, (a, b), sa=a.shape, sb=b.shape)


@_vjp("sub")
def _sub_vjp(g, s):
    return _unbroadcast(g, s["sa"]), -_unbroadcast(g, s["sb"])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_mul_broadcast(a, b)
    return _record("mul", a.data * b.data, (a, b), a=a.data, b=b.data)


@_vjp("mul")
def _mul_vjp(g, s):
    return _unbroadcast(g * s["b"], s["a"].shape), _unbroadcast(g * s["a"], s["b"].shape)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,))


@_vjp("neg")
def _neg_vjp(g, s):
    return (-g,)


def scale(a, factor: float) -> Tensor:
    """Multiply by a Python constant."""
    a = as_tensor(a)
    return _record("scale", a.data * factor, (a,), factor=float(factor))


@_vjp("scale")
def _scale_vjp(g, s):
    return (g * s["factor"],)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _record("power", a.data ** exponent, (a,), a=a.data, p=float(exponent))


@_vjp("power")
def _power_vjp(g, s):
    return (g * s["p"] * s["a"] ** (s["p"] - 1.0),)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if axis not in (-1, ts[0].data.ndim - 1):
        raise ShapeMismatch("concat only supports the last axis")
    out = np.concatenate([t.data for t in ts], axis=-1)
    widths = [t.shape[-1] for t in ts]
    return _record("concat", out, ts, widths=widths)


@_vjp("concat")
def _concat_vjp(g, s):
    bounds = np.cumsum([0] + s["widths"])
    return [g[..., bounds[k]:bounds[k + 1]] for k in range(len(s["widths"]))]


# -------------------------------------------------------------- activations

def relu(a) -> Tensor:
    a = as_tensor(a)
    return _record("relu", np.maximum(a.data, 0.0), (a,), mask=a.data > 0)


@_vjp("relu")
def _relu_vjp(g, s):
    return (g * s["mask"],)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data > 0, a.data, slope * a.data)
    return _record("leaky_relu", out, (a,), mask=a.data > 0, slope=slope)


@_vjp("leaky_relu")
def _leaky_relu_vjp(g, s):
    return (g * np.where(s["mask"], 1.0, s["slope"]),)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _record("sigmoid", out, (a,), out=out)


@_vjp("sigmoid")
def _sigmoid_vjp(g, s):
    return (g * s["out"] * (1.0 - s["out"]),)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), out=out)


@_vjp("tanh")
def _tanh_vjp(g, s):
    return (g * (1.0 - s["out"] ** 2),)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), out=out)


@_vjp("exp")
def _exp_vjp(g, s):
    return (g * s["out"],)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record("log", np.log(a.data), (a,), a=a.data)


@_vjp("log")
def _log_vjp(g, s):
    return (g / s["a"],)


def softplus(a) -> Tensor:
    """log(1 + exp(x)) without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _record("softplus", out, (a,), a=x)


@_vjp("softplus")
def _softplus_vjp(g, s):
    return (g * _stable_sigmoid(s["a"]),)


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return _record("abs", np.abs(a.data), (a,), sign=np.sign(a.data))


@_vjp("abs")
def _abs_vjp(g, s):
    return (g * s["sign"],)


def huber(a, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty of residuals ``a``."""
    a = as_tensor(a)
    x = a.data
    small = np.abs(x) <= delta
    out = np.where(small, 0.5 * x * x, delta * (np.abs(x) - 0.5 * delta))
    return _record("huber", out, (a,), a=x, small=small, delta=delta)


@_vjp("huber")
def _huber_vjp(g, s):
    return (g * np.where(s["small"], s["a"], s["delta"] * np.sign(s["a"])),)


def log_softmax(a) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return _record("log_softmax", out, (a,), out=out)


@_vjp("log_softmax")
def _log_softmax_vjp(g, s):
    soft = np.exp(s["out"])
    return (g - soft * g.sum(axis=1, keepdims=True),)


# -------------------------------------------------------------- reductions

def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum() if axis is None else a.data.sum(axis=axis)
    return _record("sum", np.asarray(out), (a,), shape=a.shape, axis=axis)


@_vjp("sum")
def _sum_vjp(g, s):
    if s["axis"] is None:
        return (np.broadcast_to(g, s["shape"]),)
    return (np.broadcast_to(np.expand_dims(g, s["axis"]), s["shape"]),)


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean() if axis is None else a.data.mean(axis=axis)
    return _record("mean", np.asarray(out), (a,), shape=a.shape, axis=axis, n=n)


@_vjp("mean")
def _mean_vjp(g, s):
    if s["axis"] is None:
        return (np.broadcast_to(g / s["n"], s["shape"]),)
    return (np.broadcast_to(np.expand_dims(g, s["axis"]) / s["n"], s["shape"]),)


# ----------------------------------------------------------------- indexed

def gather_rows(data, indices) -> Tensor:
    data = as_tensor(data)
    idx = np.asarray(indices, dtype=np.int64)
    return _record("gather_rows", data.data[idx], (data,), idx=idx, n=data.shape[0])


@_vjp("gather_rows")
def _gather_rows_vjp(g, s):
    out = np.zeros((s["n"],) + g.shape[1:])
    np.add.at(out, s["idx"], g)
    return (out,)


def segment_sum(data, segment_ids, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id; empty segments give zero rows."""
    data = as_tensor(data)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape[0] != data.shape[0]:
        raise ShapeMismatch("segment_ids length must equal the number of rows")
    out = np.zeros((num_segments,) + data.shape[1:])
    np.add.at(out, ids, data.data)
    return _record("segment_sum", out, (data,), ids=ids)


@_vjp("segment_sum")
def _segment_sum_vjp(g, s):
    return (g[s["ids"]],)


def segment_max(data, segment_ids, num_segments: int) -> Tensor:
    """Row-wise max per segment; gradient flows to the first maximal row."""
    data = as_tensor(data)
    ids = np.asarray(segment_ids, dtype=np.int64)
    x = data.data
    out = np.full((num_segments,) + x.shape[1:], -np.inf)
    np.maximum.at(out, ids, x)
    empty = np.isneginf(out)
    out[empty] = 0.0
    # first row attaining the max owns the gradient
    hit = (x == out[ids]) & ~empty[ids]
    owner = np.full(out.shape, -1, dtype=np.int64)
    for r in range(x.shape[0] - 1, -1, -1):
        sel = hit[r]
        owner[ids[r]][sel] = r
    return _record("segment_max", out, (data,), ids=ids, owner=owner, shape=x.shape)


@_vjp("segment_max")
def _segment_max_vjp(g, s):
    out = np.zeros(s["shape"])
    owner = s["owner"]
    seg, *cols = np.nonzero(owner >= 0)
    out[(owner[(seg, *cols)], *cols)] = g[(seg, *cols)]
    return (out,)


def segment_softmax(logits, segment_ids, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, independently per column."""
    logits = as_tensor(logits)
    ids = np.asarray(segment_ids, dtype=np.int64)
    x = logits.data
    seg_max = np.full((num_segments,) + x.shape[1:], -np.inf)
    np.maximum.at(seg_max, ids, x)
    ex = np.exp(x - seg_max[ids])
    denom = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(denom, ids, ex)
    out = ex / denom[ids]
    return _record("segment_softmax", out, (logits,), ids=ids, probs=out, n=num_segments)


@_vjp("segment_softmax")
def _segment_softmax_vjp(g, s):
    out, ids = s["probs"], s["ids"]
    dot = np.zeros((s["n"],) + out.shape[1:])
    np.add.at(dot, ids, g * out)
    return (out * (g - dot[ids]),)


# ----------------------------------------------------------- grad checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    worst: Optional[tuple] = None  # (input index, flat index)
    nondifferentiable: list = field(default_factory=list)
    checked: int = 0

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.1e}) over "
                f"{self.checked} coordinates, {len(self.nondifferentiable)} kinks skipped")


def grad_check(f: Callable, inputs: Sequence[np.ndarray], eps: float = 1e-6, tol: float = 1e-6,
               floor: float = 1e-3) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``f(tape, *tensors)`` must return a 1-element tensor. The relative error of
    a coordinate is ``|a - n| / max(|a|, |n|, floor)``. Coordinates where the
    forward and backward one-sided slopes disagree are treated as kinks,
    reported in ``nondifferentiable`` and excluded from the maximum.
    """
    arrays = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    tape = Tape()
    leaves = [tape.variable(x) for x in arrays]
    out = f(tape, *leaves)
    tape.backward(out)
    analytic = [tape.grad(t) for t in leaves]

    def value(k, flat, delta):
        pert = [a.copy() for a in arrays]
        pert[k].reshape(-1)[flat] += delta
        return float(np.asarray(as_tensor(f(Tape(), *[Tensor(p) for p in pert])).data).reshape(-1)[0])

    base = float(out.data.reshape(-1)[0])
    worst, worst_at, kinks, checked = 0.0, None, [], 0
    for k, arr in enumerate(arrays):
        for flat in range(arr.size):
            fp, fm = value(k, flat, eps), value(k, flat, -eps)
            numeric = (fp - fm) / (2 * eps)
            fwd, bwd = (fp - base) / eps, (base - fm) / eps
            if np.abs(fwd - bwd) > 1e-2 * max(1.0, np.abs(fwd), np.abs(bwd)):
                kinks.append((k, flat))
                continue
            a = analytic[k].reshape(-1)[flat]
            rel = np.abs(a - numeric) / max(np.abs(a), np.abs(numeric), floor)
            checked += 1
            if rel > worst:
                worst, worst_at = rel, (k, flat)
    return GradCheckReport(worst, tol, worst < tol, worst_at, kinks, checked)
