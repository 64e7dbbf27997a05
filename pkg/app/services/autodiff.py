"""
Reverse-mode automatic differentiation over dense float64 arrays

A ``Tape`` records every operation as a node referencing only earlier nodes,
so the recording order is already a topological order and ``backward`` is a
single reverse sweep. Tapes are built per batch and dropped after the
optimizer step; a ``Tape(requires_grad=False)`` keeps no nodes at all and is
used for inference.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from app.exceptions import NumericalDomainError, ShapeMismatchError

logger = logging.getLogger(__name__)

DIVISION_FLOOR = 1e-12

ArrayLike = Union[float, int, np.ndarray]


@dataclass
class _Node:
    kind: str
    inputs: Tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: Optional[str] = None


class Var:
    """Handle to a value recorded on a tape"""

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: np.ndarray):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)


class Tape:
    """Append-only record of operations"""

    def __init__(self, requires_grad: bool = True):
        self.requires_grad = requires_grad
        self.nodes: List[_Node] = []
        self.values: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, kind: str, inputs: Tuple[int, ...], value: np.ndarray,
              attrs: Optional[dict] = None, name: Optional[str] = None) -> Var:
        if not self.requires_grad:
            return Var(self, -1, value)
        self.nodes.append(_Node(kind, inputs, attrs or {}, name))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1, value)

    def leaf(self, value: ArrayLike, name: Optional[str] = None) -> Var:
        """Differentiable input; named leaves receive gradients from ``backward``"""
        return self._push("leaf", (), np.asarray(value, dtype=np.float64), name=name)

    def const(self, value: ArrayLike) -> Var:
        return self._push("const", (), np.asarray(value, dtype=np.float64))


def const(tape: Tape, value: ArrayLike) -> Var:
    return tape.const(value)


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ShapeMismatchError("Cannot combine values recorded on different tapes")
        return x
    return tape.const(x)


def _tape_of(*items) -> Tape:
    for item in items:
        if isinstance(item, Var):
            return item.tape
        if isinstance(item, (list, tuple)):
            for sub_item in item:
                if isinstance(sub_item, Var):
                    return sub_item.tape
    raise ShapeMismatchError("Operation needs at least one recorded value")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to an input's shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(*shapes) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeMismatchError(f"Shapes do not broadcast: {shapes}")


# --- op registry -------------------------------------------------------------

@dataclass(frozen=True)
class OpDef:
    forward: Callable
    backward: Callable


_OPS: Dict[str, OpDef] = {}


def _op(kind: str, forward: Callable, backward: Callable) -> None:
    _OPS[kind] = OpDef(forward, backward)


def _fwd_div(a, b):
    if np.any(np.abs(b) < DIVISION_FLOOR):
        raise NumericalDomainError("Division by a value with magnitude below 1e-12")
    return a / b


def _fwd_log(a):
    if np.any(a <= 0.0):
        raise NumericalDomainError("Logarithm of a non-positive value")
    return np.log(a)


def _fwd_sqrt(a):
    if np.any(a < 0.0):
        raise NumericalDomainError("Square root of a negative value")
    return np.sqrt(a)


def _fwd_matvec(w, x):
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeMismatchError(f"matvec shapes do not conform: {w.shape} x {x.shape}")
    return x @ w.T


def _bwd_matvec(g, out, inputs, attrs):
    w, x = inputs
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    return g2.T @ x2, g @ w


def _fwd_dot(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatchError(f"dot shapes do not conform: {a.shape} . {b.shape}")
    return np.sum(a * b, axis=-1)


def _bwd_dot(g, out, inputs, attrs):
    a, b = inputs
    ge = g[..., None]
    return _unbroadcast(ge * b, a.shape), _unbroadcast(ge * a, b.shape)


def _fwd_sum(a, axis=None):
    return np.sum(a, axis=axis)


def _bwd_sum(g, out, inputs, attrs):
    (a,) = inputs
    axis = attrs.get("axis")
    if axis is None:
        return (np.broadcast_to(g, a.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def _fwd_mean(a, axis=None):
    return np.mean(a, axis=axis)


def _bwd_mean(g, out, inputs, attrs):
    (a,) = inputs
    axis = attrs.get("axis")
    count = a.size if axis is None else a.shape[axis]
    (grad,) = _bwd_sum(g, out, inputs, attrs)
    return (grad / count,)


def _fwd_concat(*arrays, axis=-1):
    return np.concatenate(arrays, axis=axis)


def _bwd_concat(g, out, inputs, attrs):
    axis = attrs.get("axis", -1)
    sizes = [a.shape[axis] for a in inputs]
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _fwd_gather(a, index=None):
    return a[index]


def _bwd_gather(g, out, inputs, attrs):
    (a,) = inputs
    grad = np.zeros_like(a)
    np.add.at(grad, attrs["index"], g)
    return (grad,)


def _fwd_slice(a, start=0, stop=None):
    return a[..., start:stop]


def _bwd_slice(g, out, inputs, attrs):
    (a,) = inputs
    grad = np.zeros_like(a)
    grad[..., attrs.get("start", 0):attrs.get("stop")] = g
    return (grad,)


def _fwd_cumsum(a):
    shifted = np.cumsum(a, axis=-1)
    out = np.zeros_like(a)
    out[..., 1:] = shifted[..., :-1]
    return out


def _bwd_cumsum(g, out, inputs, attrs):
    reverse = np.flip(np.cumsum(np.flip(g, axis=-1), axis=-1), axis=-1)
    return (reverse - g,)


def _fwd_sigmoid(a):
    return expit(a)


_op("add", lambda a, b: a + b, lambda g, o, i, at: (_unbroadcast(g, i[0].shape), _unbroadcast(g, i[1].shape)))
_op("sub", lambda a, b: a - b, lambda g, o, i, at: (_unbroadcast(g, i[0].shape), _unbroadcast(-g, i[1].shape)))
_op("mul", lambda a, b: a * b,
    lambda g, o, i, at: (_unbroadcast(g * i[1], i[0].shape), _unbroadcast(g * i[0], i[1].shape)))
_op("div", _fwd_div,
    lambda g, o, i, at: (_unbroadcast(g / i[1], i[0].shape), _unbroadcast(-g * i[0] / i[1] ** 2, i[1].shape)))
_op("neg", lambda a: -a, lambda g, o, i, at: (-g,))
_op("exp", np.exp, lambda g, o, i, at: (g * o,))
_op("log", _fwd_log, lambda g, o, i, at: (g / i[0],))
_op("sin", np.sin, lambda g, o, i, at: (g * np.cos(i[0]),))
_op("cos", np.cos, lambda g, o, i, at: (-g * np.sin(i[0]),))
_op("abs", np.abs, lambda g, o, i, at: (g * np.sign(i[0]),))
_op("square", np.square, lambda g, o, i, at: (2.0 * g * i[0],))
_op("sqrt", _fwd_sqrt, lambda g, o, i, at: (np.where(o > 0, g / (2.0 * np.where(o > 0, o, 1.0)), 0.0),))
_op("min", np.minimum,
    lambda g, o, i, at: (_unbroadcast(np.where(i[0] <= i[1], g, 0.0), i[0].shape),
                         _unbroadcast(np.where(i[0] <= i[1], 0.0, g), i[1].shape)))
_op("max", np.maximum,
    lambda g, o, i, at: (_unbroadcast(np.where(i[0] >= i[1], g, 0.0), i[0].shape),
                         _unbroadcast(np.where(i[0] >= i[1], 0.0, g), i[1].shape)))
_op("softplus", lambda a: np.logaddexp(0.0, a), lambda g, o, i, at: (g * expit(i[0]),))
_op("sigmoid", _fwd_sigmoid, lambda g, o, i, at: (g * o * (1.0 - o),))
_op("matvec", _fwd_matvec, _bwd_matvec)
_op("dot", _fwd_dot, _bwd_dot)
_op("sum", _fwd_sum, _bwd_sum)
_op("mean", _fwd_mean, _bwd_mean)
_op("clamp_min", lambda a, floor=0.0: np.maximum(a, floor),
    lambda g, o, i, at: (np.where(i[0] > at.get("floor", 0.0), g, 0.0),))
_op("concat", _fwd_concat, _bwd_concat)
_op("gather", _fwd_gather, _bwd_gather)
_op("slice", _fwd_slice, _bwd_slice)
_op("reshape", lambda a, shape=None: a.reshape(shape), lambda g, o, i, at: (g.reshape(i[0].shape),))
_op("cumsum", _fwd_cumsum, _bwd_cumsum)

_ELEMENTWISE_BINARY = {"add", "sub", "mul", "div", "min", "max"}


def record_op(tape: Tape, kind: str, *inputs, **attrs) -> Var:
    """Compute an op's forward value and record it for the backward sweep"""
    try:
        op = _OPS[kind]
    except KeyError:
        raise ShapeMismatchError(f"Unknown op kind: {kind}")
    vars_ = [_lift(tape, x) for x in inputs]
    values = [v.value for v in vars_]
    if kind in _ELEMENTWISE_BINARY:
        _broadcast_shape(*(v.shape for v in values))
    value = np.asarray(op.forward(*values, **attrs), dtype=np.float64)
    return tape._push(kind, tuple(v.id for v in vars_), value, attrs)


# --- public op helpers -------------------------------------------------------

def add(a, b) -> Var: return record_op(_tape_of(a, b), "add", a, b)
def sub(a, b) -> Var: return record_op(_tape_of(a, b), "sub", a, b)
def mul(a, b) -> Var: return record_op(_tape_of(a, b), "mul", a, b)
def div(a, b) -> Var: return record_op(_tape_of(a, b), "div", a, b)
def neg(a) -> Var: return record_op(a.tape, "neg", a)
def exp(a) -> Var: return record_op(a.tape, "exp", a)
def log(a) -> Var: return record_op(a.tape, "log", a)
def sin(a) -> Var: return record_op(a.tape, "sin", a)
def cos(a) -> Var: return record_op(a.tape, "cos", a)
def absolute(a) -> Var: return record_op(a.tape, "abs", a)
def square(a) -> Var: return record_op(a.tape, "square", a)
def sqrt(a) -> Var: return record_op(a.tape, "sqrt", a)
def minimum(a, b) -> Var: return record_op(_tape_of(a, b), "min", a, b)
def maximum(a, b) -> Var: return record_op(_tape_of(a, b), "max", a, b)
def softplus(a) -> Var: return record_op(a.tape, "softplus", a)
def sigmoid(a) -> Var: return record_op(a.tape, "sigmoid", a)
def matvec(w, x) -> Var: return record_op(_tape_of(w, x), "matvec", w, x)
def dot(a, b) -> Var: return record_op(_tape_of(a, b), "dot", a, b)
def clamp_min(a, floor: float = 0.0) -> Var: return record_op(a.tape, "clamp_min", a, floor=floor)
def reshape(a, shape) -> Var: return record_op(a.tape, "reshape", a, shape=tuple(shape))
def exclusive_cumsum(a) -> Var: return record_op(a.tape, "cumsum", a)


def reduce_sum(a, axis: Optional[int] = None) -> Var:
    return record_op(a.tape, "sum", a, axis=axis)


def reduce_mean(a, axis: Optional[int] = None) -> Var:
    return record_op(a.tape, "mean", a, axis=axis)


def concat(items: Sequence, axis: int = -1) -> Var:
    return record_op(_tape_of(items), "concat", *items, axis=axis)


def gather(a, index: np.ndarray) -> Var:
    """Rows a[index] with scatter-add backward"""
    return record_op(a.tape, "gather", a, index=np.asarray(index, dtype=np.int64))


def take_columns(a, start: int, stop: Optional[int] = None) -> Var:
    return record_op(a.tape, "slice", a, start=start, stop=stop)


def linear(x, weight, bias) -> Var:
    """Affine layer x W^T + b"""
    return add(matvec(weight, x), bias)


# --- backward ----------------------------------------------------------------

def backward(tape: Tape, root: Var) -> Dict[str, np.ndarray]:
    """Gradients of a scalar root with respect to every named leaf

    Leaves that do not reach the root get zero gradients.
    """
    if not tape.requires_grad:
        raise ShapeMismatchError("Cannot differentiate a tape recorded without gradients")
    if root.tape is not tape:
        raise ShapeMismatchError("Root was recorded on a different tape")
    if root.value.size != 1:
        raise ShapeMismatchError(f"backward needs a scalar root, got shape {root.shape}")

    grads: List[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[root.id] = np.ones_like(root.value)
    leaf_grads: Dict[int, np.ndarray] = {}
    for node_id in range(root.id, -1, -1):
        grad = grads[node_id]
        if grad is None:
            continue
        node = tape.nodes[node_id]
        if node.kind == "leaf":
            leaf_grads[node_id] = grad
            continue
        if node.kind == "const":
            continue
        grads[node_id] = None
        inputs = [tape.values[i] for i in node.inputs]
        input_grads = _OPS[node.kind].backward(grad, tape.values[node_id], inputs, node.attrs)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_grad is None:
                continue
            previous = grads[input_id]
            grads[input_id] = input_grad if previous is None else previous + input_grad

    result: Dict[str, np.ndarray] = {}
    for node_id, node in enumerate(tape.nodes):
        if node.kind != "leaf" or node.name is None:
            continue
        grad = leaf_grads.get(node_id)
        if grad is None:
            grad = np.zeros_like(tape.values[node_id])
        result[node.name] = grad if node.name not in result else result[node.name] + grad
    return result


# --- parameters and optimizer ------------------------------------------------

class ParamStore:
    """Named float64 parameter arrays with Adam moments"""

    def __init__(self, arrays: Optional[Mapping[str, np.ndarray]] = None):
        self.params: Dict[str, np.ndarray] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value: ArrayLike) -> None:
        array = np.array(value, dtype=np.float64, copy=True)
        self.params[name] = array
        self.m[name] = np.zeros_like(array)
        self.v[name] = np.zeros_like(array)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self.params.items()}

    def count(self) -> int:
        return int(sum(value.size for value in self.params.values()))

    def bind(self, tape: Tape) -> Dict[str, Var]:
        """Record every parameter on a tape (as named leaves when differentiating)"""
        if tape.requires_grad:
            return {name: tape.leaf(value, name) for name, value in self.params.items()}
        return {name: tape.const(value) for name, value in self.params.items()}

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, value in self.params.items():
            clone.params[name] = value.copy()
            clone.m[name] = self.m[name].copy()
            clone.v[name] = self.v[name].copy()
        clone.step = self.step
        return clone

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.params.values())


def adam_step(store: ParamStore, gradients: Mapping[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """Bias-corrected Adam update applied in place; missing gradients count as zero"""
    for name, grad in gradients.items():
        if name not in store:
            continue
        if np.shape(grad) != store[name].shape:
            raise ShapeMismatchError(
                f"Gradient for {name} has shape {np.shape(grad)}, parameter has {store[name].shape}",
                name=name,
            )
    store.step += 1
    correction1 = 1.0 - beta1 ** store.step
    correction2 = 1.0 - beta2 ** store.step
    for name, param in store.params.items():
        grad = gradients.get(name)
        if grad is None:
            grad = np.zeros_like(param)
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * np.square(grad)
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return store


# --- gradient checking -------------------------------------------------------

def _evaluate(f: Callable, params: Dict[str, np.ndarray], as_dict: bool) -> float:
    tape = Tape(requires_grad=False)
    bound = {name: tape.const(value) for name, value in params.items()}
    out = f(bound) if as_dict else f(bound["x"])
    return float(np.asarray(out.value).reshape(()))


def gradient_check(f: Callable, point: Union[np.ndarray, Mapping[str, np.ndarray]], eps: float = 1e-4) -> float:
    """Max relative disagreement between ``backward`` and central differences

    ``f`` maps bound parameters (a dict of Vars, or a single Var when ``point``
    is an array) to a scalar Var.
    """
    as_dict = isinstance(point, Mapping)
    params = {name: np.array(value, dtype=np.float64, copy=True)
              for name, value in (point.items() if as_dict else [("x", point)])}

    tape = Tape()
    bound = {name: tape.leaf(value, name) for name, value in params.items()}
    out = f(bound) if as_dict else f(bound["x"])
    analytic = backward(tape, out)

    worst = 0.0
    for name, value in params.items():
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + eps
            plus = _evaluate(f, params, as_dict)
            value[index] = original - eps
            minus = _evaluate(f, params, as_dict)
            value[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic[name][index])
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
    return worst
