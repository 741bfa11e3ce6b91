"""
Tensor autodiff
---------------
Dense float64 tensors backed by numpy, with a define-by-run tape for
reverse-mode differentiation.

- Every differentiable op records one TapeEntry on the active Tape.
- Tape.backward() walks the entries in exact reverse execution order.
- Ops never write into their inputs' buffers; results are fresh arrays.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from idgnn.errors import ContractViolation, IndexRangeError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("idgnn_active_tape", default=None)
_GRAD_ENABLED: ContextVar[bool] = ContextVar("idgnn_grad_enabled", default=True)
# ops run outside any `with Tape()` block land here; one per thread/context,
# released by the first backward() through it
_DEFAULT_TAPE: ContextVar[Optional["Tape"]] = ContextVar("idgnn_default_tape", default=None)


# -----------------------------
# Tensor
# -----------------------------
class Tensor:
    """A float64 array that can take part in a gradient tape."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        # copy so later in-place edits of the caller's array cannot leak in
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._entry: Optional[TapeEntry] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._entry = None
        out._tape = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def is_leaf(self) -> bool:
        return self._entry is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            if self.requires_grad and self.is_leaf:
                self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
                return
            raise ContractViolation("backward() called on a tensor that no tape recorded")
        self._tape.backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: "TensorLike") -> "Tensor":
        return add(self, other)

    def __radd__(self, other: "TensorLike") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "TensorLike") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "TensorLike") -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: "TensorLike") -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


TensorLike = Union[Tensor, float, int, np.ndarray]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# -----------------------------
# Tape
# -----------------------------
@dataclass
class TapeEntry:
    index: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn


class Tape:
    """Ordered record of executed operations.

    Use as a context manager so every op inside the block lands here:

        with Tape():
            loss = model_loss(...)
            loss.backward()
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self._tokens: List = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> None:
        for inp in inputs:
            if inp._tape is not None and inp._tape is not self:
                raise ContractViolation(f"{op}: input was recorded on a different tape")
        entry = TapeEntry(len(self.entries), op, inputs, output, backward_fn)
        self.entries.append(entry)
        output._entry = entry
        output._tape = self

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss._entry is None:
            raise ContractViolation("loss was not recorded on this tape")
        idx = loss._entry.index
        if idx >= len(self.entries) or self.entries[idx] is not loss._entry:
            raise ContractViolation("the implicit tape holding this loss was released by an earlier backward()")

        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries[: loss._entry.index + 1]):
            grad_out = pending.pop(id(entry.output), None)
            if grad_out is None:
                continue
            input_grads = entry.backward_fn(grad_out)
            for inp, grad_in in zip(entry.inputs, input_grads):
                if grad_in is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.grad = grad_in.copy() if inp.grad is None else inp.grad + grad_in
                else:
                    key = id(inp)
                    pending[key] = grad_in if key not in pending else pending[key] + grad_in

        # the implicit tape is single-use, like a graph without retain
        if _DEFAULT_TAPE.get() is self:
            self.entries.clear()
            _DEFAULT_TAPE.set(None)


def _tape_for(inputs: Tuple[Tensor, ...]) -> Tape:
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        return tape
    for inp in inputs:
        if inp._tape is not None:
            return inp._tape
    tape = _DEFAULT_TAPE.get()
    if tape is None:
        tape = Tape()
        _DEFAULT_TAPE.set(tape)
    return tape


def default_tape() -> Optional[Tape]:
    """The implicit tape collecting ops run outside a Tape block, if any."""
    return _DEFAULT_TAPE.get()


def reset_default_tape() -> None:
    """Drop everything recorded outside an explicit Tape block."""
    _DEFAULT_TAPE.set(None)


@contextmanager
def no_grad() -> Iterator[None]:
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    requires = _GRAD_ENABLED.get() and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    if requires:
        _tape_for(inputs).record(op, inputs, out, backward_fn)
    return out


# -----------------------------
# Broadcasting helpers
# -----------------------------
def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or b.shape == ():
        return
    if a.data.ndim == 2 and b.shape in ((a.shape[1],), (a.shape[0], 1)):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    if len(shape) == 1:
        return grad.sum(axis=0)
    return grad.sum(axis=1, keepdims=True)


# -----------------------------
# Linear algebra
# -----------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        return g @ b_data.T, a_data.T @ g

    return _result("matmul", a_data @ b_data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


# -----------------------------
# Elementwise
# -----------------------------
def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    a_shape, b_shape = a.shape, b.shape

    def backward(g: np.ndarray):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _result("add", a.data + b.data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    a_shape, b_shape = a.shape, b.shape

    def backward(g: np.ndarray):
        return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _result("mul", a_data * b_data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray):
        return (g * factor,)

    return _result("scale", a.data * factor, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g: np.ndarray):
        return (g * mask,)

    return _result("relu", np.where(mask, a.data, 0.0), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)

    def backward(g: np.ndarray):
        return (g * factor,)

    return _result("leaky_relu", a.data * factor, (a,), backward)


def identity(a: Tensor) -> Tensor:
    return a


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    tensors = tuple(as_tensor(t) for t in tensors)
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        other_dims = [d for i, d in enumerate(t.shape) if i != axis % ndim]
        first_dims = [d for i, d in enumerate(tensors[0].shape) if i != axis % ndim]
        if t.data.ndim != ndim or other_dims != first_dims:
            raise ShapeError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, cuts, axis=axis))

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def dropout(a: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ContractViolation("dropout at train time needs an rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g: np.ndarray):
        return (g * mask,)

    return _result("dropout", a.data * mask, (a,), backward)


# -----------------------------
# Reductions
# -----------------------------
def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g: np.ndarray):
        return (np.full(shape, float(g)),)

    return _result("sum", np.asarray(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    count = max(a.data.size, 1)
    return scale(sum_all(a), 1.0 / count)


def sq_frobenius_diff(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared entrywise differences, sum((a - b)^2)."""
    if a.shape != b.shape:
        raise ShapeError(f"sq_frobenius_diff: shapes differ, {a.shape} vs {b.shape}")
    diff = a.data - b.data

    def backward(g: np.ndarray):
        return 2.0 * diff * g, -2.0 * diff * g

    return _result("sq_frobenius_diff", np.asarray(np.sum(diff * diff)), (a, b), backward)


# -----------------------------
# Index / scatter ops
# -----------------------------
def _as_index(index: Union[np.ndarray, Sequence[int]]) -> np.ndarray:
    return np.asarray(index, dtype=np.int64).reshape(-1)


def gather_rows(a: Tensor, index: Union[np.ndarray, Sequence[int]]) -> Tensor:
    idx = _as_index(index)
    rows = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexRangeError(f"gather_rows: index out of range for {rows} rows")
    shape = a.shape

    def backward(g: np.ndarray):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result("gather_rows", a.data[idx], (a,), backward)


def scatter_add(values: Tensor, index: Union[np.ndarray, Sequence[int]], num_rows: int) -> Tensor:
    """Row i of the result is the sum of values[j] for all j with index[j] == i."""
    idx = _as_index(index)
    if idx.shape[0] != values.shape[0]:
        raise ShapeError(f"scatter_add: {idx.shape[0]} indices for values of shape {values.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexRangeError(f"scatter_add: index out of range for {num_rows} rows")
    out = np.zeros((num_rows,) + values.shape[1:])
    np.add.at(out, idx, values.data)

    def backward(g: np.ndarray):
        return (g[idx],)

    return _result("scatter_add", out, (values,), backward)


def _directed(edges: np.ndarray, num_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise IndexRangeError(f"edge endpoint outside [0, {num_nodes})")
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    return src, dst


def segment_sum(h: Tensor, edges: np.ndarray) -> Tensor:
    """Neighbour aggregation: row v is the sum of h[u] over the neighbours u of v.

    `edges` holds each undirected edge once; both directions are used.
    """
    n = h.shape[0]
    src, dst = _directed(edges, n)
    out = np.zeros(h.shape)
    np.add.at(out, dst, h.data[src])

    def backward(g: np.ndarray):
        grad = np.zeros(g.shape)
        np.add.at(grad, src, g[dst])
        return (grad,)

    return _result("segment_sum", out, (h,), backward)


def softmax_over_segments(scores: Tensor, segment: Union[np.ndarray, Sequence[int]], num_segments: int) -> Tensor:
    """Softmax of scores within each segment, independently per column."""
    seg = _as_index(segment)
    if seg.shape[0] != scores.shape[0]:
        raise ShapeError(f"softmax_over_segments: {seg.shape[0]} segment ids for scores {scores.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise IndexRangeError(f"softmax_over_segments: segment id outside [0, {num_segments})")
    tail = scores.shape[1:]
    seg_max = np.full((num_segments,) + tail, -np.inf)
    np.maximum.at(seg_max, seg, scores.data)
    shifted = np.exp(scores.data - seg_max[seg])
    seg_sum = np.zeros((num_segments,) + tail)
    np.add.at(seg_sum, seg, shifted)
    probs = shifted / seg_sum[seg]

    def backward(g: np.ndarray):
        weighted = np.zeros((num_segments,) + tail)
        np.add.at(weighted, seg, g * probs)
        return (probs * (g - weighted[seg]),)

    return _result("softmax_over_segments", probs, (scores,), backward)


def sum_pool(h: Tensor, membership: Union[np.ndarray, Sequence[int]], num_graphs: int) -> Tensor:
    return scatter_add(h, membership, num_graphs)


def mean_pool(h: Tensor, membership: Union[np.ndarray, Sequence[int]], num_graphs: int) -> Tensor:
    member = _as_index(membership)
    counts = np.bincount(member, minlength=num_graphs).astype(np.float64)
    inv = 1.0 / np.maximum(counts, 1.0)
    return mul(sum_pool(h, member, num_graphs), Tensor(inv.reshape(-1, 1)))


# -----------------------------
# Losses
# -----------------------------
def cross_entropy(logits: Tensor, labels: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    target = _as_index(labels)
    if logits.data.ndim != 2 or logits.shape[0] != target.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {target.shape[0]} labels")
    count, num_classes = logits.shape
    if count == 0:
        raise ContractViolation("cross_entropy over an empty set of targets")
    if target.min() < 0 or target.max() >= num_classes:
        raise IndexRangeError(f"cross_entropy: label outside [0, {num_classes})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(count)
    loss = -log_probs[rows, target].mean()

    def backward(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, target] -= 1.0
        return (grad * (float(g) / count),)

    return _result("cross_entropy", np.asarray(loss), (logits,), backward)
