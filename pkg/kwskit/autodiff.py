"""
Reverse-mode automatic differentiation over dense 2-D matrices.

Every op returns a new ``Value``. When a ``Tape`` is active on the current
thread and at least one input requires a gradient, the result is appended to
that tape together with its adjoint; with no active tape ops only compute
values, which is how inference runs.

Shapes are always 2-D. Scalars are (1, 1). The only broadcast is adding a
(1, cols) row vector to every row of a matrix.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from kwskit.errors import NonFinite, NotScalar, NumericalError, ShapeMismatch

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape entered on this thread, if any (None inside no_grad)"""
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording on this thread, e.g. for inference inside a training step"""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


class Tape:
    """Ordered record of applied ops; each node is appended after its inputs"""

    def __init__(self):
        self.nodes: List["Value"] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: "Value") -> None:
        node._tape = self
        node._index = len(self.nodes)
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
            node.grad = None
        self.nodes = []


class Value:
    """A dense matrix with an optional gradient and the op that produced it"""

    __slots__ = ("data", "grad", "requires_grad", "is_param", "name", "op",
                 "_parents", "_backward", "_tape", "_index")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None, is_param: bool = False):
        array = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if array.dtype.kind not in "f":
            array = array.astype(np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:
            raise ShapeMismatch("Value", array.shape)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or is_param
        self.is_param = is_param
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Value", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._tape: Optional[Tape] = None
        self._index = -1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(self.shape)
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Value{label}(shape={self.shape}, op={self.op}, dtype={self.dtype})"


def parameter(data: ArrayLike, name: str, dtype=np.float32) -> Value:
    """A trainable leaf"""
    return Value(data, name=name, dtype=dtype, is_param=True)


def constant(data: ArrayLike, like: Optional[Value] = None) -> Value:
    """A leaf that never receives a gradient, in the dtype of ``like``"""
    dtype = like.dtype if like is not None else None
    return Value(data, dtype=dtype)


def _as_value(x, like: Optional[Value] = None) -> Value:
    if isinstance(x, Value):
        return x
    return constant(x, like if isinstance(like, Value) else None)


def _result(data: np.ndarray, parents: Tuple[Value, ...], backward_fn, op: str) -> Value:
    if not np.isfinite(data).all():
        raise NonFinite(op)
    out = Value.__new__(Value)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.is_param = False
    out.name = None
    out.op = op
    out._parents = ()
    out._backward = None
    out._tape = None
    out._index = -1
    tape = active_tape()
    if out.requires_grad and tape is not None:
        out._parents = parents
        out._backward = backward_fn
        tape.record(out)
    return out


# --- ops ---------------------------------------------------------------------

def matmul(a: Value, b: Value) -> Value:
    b = _as_value(b, a)
    a = _as_value(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Value) -> Value:
    def backward(g):
        a._accumulate(g.T)

    return _result(np.ascontiguousarray(a.data.T), (a,), backward, "transpose")


def add(a: Value, b: Value) -> Value:
    """a + b, where b may be a (1, cols) row broadcast over the rows of a"""
    b = _as_value(b, a)
    a = _as_value(a, b)
    row_broadcast = b.shape[0] == 1 and a.shape[0] != 1 and b.shape[1] == a.shape[1]
    if a.shape != b.shape and not row_broadcast:
        raise ShapeMismatch("add", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0, keepdims=True) if row_broadcast else g)

    return _result(a.data + b.data, (a, b), backward, "add")


def mul(a: Value, b: Value) -> Value:
    """Elementwise product"""
    b = _as_value(b, a)
    a = _as_value(a, b)
    if a.shape != b.shape:
        raise ShapeMismatch("mul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), backward, "mul")


def sigmoid(a: Value) -> Value:
    s = expit(a.data)

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _result(s, (a,), backward, "sigmoid")


def tanh(a: Value) -> Value:
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return _result(t, (a,), backward, "tanh")


def concat_cols(values: Sequence[Value]) -> Value:
    if not values:
        raise ShapeMismatch("concat_cols")
    values = [_as_value(v, values[0] if isinstance(values[0], Value) else None) for v in values]
    rows = values[0].shape[0]
    if any(v.shape[0] != rows for v in values):
        raise ShapeMismatch("concat_cols", *(v.shape for v in values))
    bounds = np.cumsum([0] + [v.shape[1] for v in values])

    def backward(g):
        for v, lo, hi in zip(values, bounds[:-1], bounds[1:]):
            if v.requires_grad:
                v._accumulate(g[:, lo:hi])

    data = np.concatenate([v.data for v in values], axis=1)
    return _result(data, tuple(values), backward, "concat_cols")


def slice_cols(a: Value, start: int, stop: int) -> Value:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeMismatch("slice_cols", a.shape, (start, stop))

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accumulate(full)

    return _result(np.ascontiguousarray(a.data[:, start:stop]), (a,), backward, "slice_cols")


def reduce_sum(a: Value, axis: Optional[int] = None) -> Value:
    """Sum of all entries (1x1), or over rows (axis=0) / columns (axis=1)"""
    data = a.data.sum(axis=axis, keepdims=True) if axis is not None else a.data.sum().reshape(1, 1)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(data, (a,), backward, "reduce_sum")


def reduce_mean(a: Value, axis: Optional[int] = None) -> Value:
    count = a.data.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=True) if axis is not None else a.data.mean().reshape(1, 1)

    def backward(g):
        a._accumulate(np.broadcast_to(g / count, a.shape).copy())

    return _result(data, (a,), backward, "reduce_mean")


def l2_normalize_rows(a: Value) -> Value:
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    if not (norms > 0).all():
        raise NonFinite("l2_normalize_rows (zero-norm row)")
    y = a.data / norms

    def backward(g):
        a._accumulate((g - y * (g * y).sum(axis=1, keepdims=True)) / norms)

    return _result(y, (a,), backward, "l2_normalize_rows")


def scalar_affine(x: Value, w: Value, b: Value) -> Value:
    """w * x + b with 1x1 w and b"""
    if w.shape != (1, 1) or b.shape != (1, 1):
        raise ShapeMismatch("scalar_affine", x.shape, w.shape, b.shape)
    w_val = w.data[0, 0]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * w_val)
        if w.requires_grad:
            w._accumulate(np.array([[np.sum(g * x.data)]], dtype=w.dtype))
        if b.requires_grad:
            b._accumulate(np.array([[np.sum(g)]], dtype=b.dtype))

    return _result(w_val * x.data + b.data[0, 0], (x, w, b), backward, "scalar_affine")


def weighted_bce_with_logits(logits: Value, targets: np.ndarray, weights: np.ndarray) -> Value:
    """
    Weighted mean binary cross-entropy on logits

    loss = sum(weights * bce(logits, targets)) / sum(weights)
    """
    targets = np.asarray(targets, dtype=logits.dtype)
    weights = np.asarray(weights, dtype=logits.dtype)
    if targets.shape != logits.shape or weights.shape != logits.shape:
        raise ShapeMismatch("weighted_bce_with_logits", logits.shape, targets.shape, weights.shape)
    total_weight = weights.sum()
    if not total_weight > 0:
        raise NonFinite("weighted_bce_with_logits (weights sum to zero)")
    z = logits.data
    # softplus(z) - t*z, computed stably
    per_pair = np.logaddexp(0.0, z) - targets * z
    loss = (weights * per_pair).sum() / total_weight

    def backward(g):
        logits._accumulate(g[0, 0] * weights * (expit(z) - targets) / total_weight)

    return _result(np.array([[loss]], dtype=logits.dtype), (logits,), backward,
                   "weighted_bce_with_logits")


# --- backward ----------------------------------------------------------------

def backward(loss: Value, free_graph: bool = True) -> List[Value]:
    """
    Propagate d(loss)/d(.) back through the tape that recorded ``loss``

    Args:
        loss (Value): 1x1 result recorded on a tape
        free_graph (bool): Drop intermediate gradients and closures afterwards

    Returns:
        list: Parameters that received a gradient, in first-reached order
    """
    if loss.shape != (1, 1):
        raise NotScalar(loss.shape)
    tape = loss._tape
    if tape is None or not tape.nodes:
        raise NumericalError("loss was not recorded on a tape (empty tape or no trainable inputs)")

    loss.grad = np.ones_like(loss.data)
    reached: Dict[int, Value] = {}
    for node in reversed(tape.nodes[:loss._index + 1]):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
        for parent in node._parents:
            if parent.is_param and id(parent) not in reached:
                reached[id(parent)] = parent

    for param in reached.values():
        if not np.isfinite(param.grad).all():
            raise NonFinite(f"gradient of {param.name or 'parameter'}")

    if free_graph:
        tape.clear()
    return list(reached.values())


# --- optimisation ------------------------------------------------------------

def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float = 1.0) -> Tuple[List[np.ndarray], float]:
    """
    Rescale gradients so their global L2 norm is at most ``max_norm``

    Returns:
        tuple: (clipped gradients, norm before clipping)
    """
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        return [g * np.asarray(scale, dtype=g.dtype) for g in grads], norm
    return list(grads), norm


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Value], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """
    One bias-corrected Adam update, applied to ``params`` in place

    Args:
        params: Parameters to update
        grads: Gradients aligned with params
        state: Moment estimates; empty on the first call

    Returns:
        AdamState: The advanced state (same object)
    """
    if len(params) != len(grads):
        raise ShapeMismatch("adam_step", (len(params),), (len(grads),))
    if state.step < 0:
        raise NumericalError(f"Adam step counter must be >= 0, got {state.step}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("adam_step", (len(state.m),), (len(params),))

    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatch("adam_step", p.shape, g.shape)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return state


class AdamOptimizer:
    """Adam over a fixed parameter list, with global-norm gradient clipping"""

    def __init__(self, params: Sequence[Value], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: Optional[float] = 1.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the pre-clip norm"""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.clip_norm:
            grads, norm = clip_grad_norm(grads, self.clip_norm)
        else:
            norm = global_norm(grads)
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        return norm
