"""
Dense tensors with reverse-mode automatic differentiation, plus an Adam optimizer.

Everything is float64 numpy underneath. Graphs are built eagerly as ops run and
are only recorded when at least one operand requires a gradient, so frozen
sub-networks and inference under `no_grad()` cost nothing extra.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class NonFiniteError(ValueError):
    """Raised when an activation receives NaN or infinite input."""


class GradientError(RuntimeError):
    """Raised on invalid backward/optimizer usage."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """
    n-dimensional float64 array that records the ops producing it.

    Leaf tensors created with requires_grad=True accumulate `.grad` on backward.
    A tensor with requires_grad=False is frozen: it never receives gradient.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op: Optional[str] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> Dict[str, np.ndarray]:
        return backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = needs
    out.grad = None
    out.name = None
    out.op = op
    if needs:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: cannot broadcast batch dims of {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def _bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(ad @ bd, (a, b), _bw, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no operands")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), _bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack: no operands")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stack: shapes {ref} and {t.shape} differ")
    ax = axis % (len(ref) + 1)

    def _bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _record(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), _bw, "stack")


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing: ints, slices, Ellipsis."""
    parts = index if isinstance(index, tuple) else (index,)
    for p in parts:
        if not (p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice))):
            raise ShapeError(f"slice: unsupported index {p!r} for shape {x.shape}")
    try:
        out = x.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index!r} invalid for shape {x.shape}") from exc
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return _record(np.array(out, dtype=np.float64), (x,), _bw, "slice")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} into {tuple(shape)}") from None
    return _record(out, (x,), lambda g: (g.reshape(src),), "reshape")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64), (x,), _bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis), Tensor(1.0 / n))


def take(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: table (V x E), ids int array of any shape -> ids.shape + (E,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"take: ids out of range for table {table.shape}")
    shape = table.shape

    def _bw(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _record(table.data[ids], (table,), _bw, "take")


def gather(x: Tensor, ids: np.ndarray) -> Tensor:
    """Pick x[..., ids[...]] along the last axis; ids has shape x.shape[:-1]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise ShapeError(f"gather: ids shape {ids.shape} does not match {x.shape[:-1]}")
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)

    return _record(np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0], (x,), _bw, "gather")


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def _check_finite(kind: str, x: Tensor) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"{kind}: input contains non-finite values (shape {x.shape})")


def _check_axis(kind: str, x: Tensor, axis: int) -> int:
    if x.ndim == 0 or not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{kind}: axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", x)
    s = special.expit(x.data)
    return _record(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    _check_finite("tanh", x)
    t = np.tanh(x.data)
    return _record(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite("softmax", x)
    ax = _check_axis("softmax", x, axis)
    s = special.softmax(x.data, axis=ax)

    def _bw(g):
        return (s * (g - np.sum(g * s, axis=ax, keepdims=True)),)

    return _record(s, (x,), _bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite("log_softmax", x)
    ax = _check_axis("log_softmax", x, axis)
    ls = special.log_softmax(x.data, axis=ax)

    def _bw(g):
        return (g - np.exp(ls) * np.sum(g, axis=ax, keepdims=True),)

    return _record(ls, (x,), _bw, "log_softmax")


def activation(kind: str, x: Tensor, axis: int = -1) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "softmax":
        return softmax(x, axis)
    if kind == "log_softmax":
        return log_softmax(x, axis)
    raise ValueError(f"unknown activation kind: {kind!r}")


_BINARY_OPS = {"add": add, "sub": sub, "mul": mul, "matmul": matmul}


def tensor_op(kind: str, *operands: Tensor, axis: int = -1, index=None, axes=None) -> Tensor:
    """Dispatch by op name; mirrors the functions above."""
    if kind in _BINARY_OPS:
        if len(operands) != 2:
            raise ShapeError(f"{kind}: expected 2 operands, got {len(operands)}")
        return _BINARY_OPS[kind](*operands)
    if kind == "concat":
        return concat(operands, axis=axis)
    if kind == "slice":
        return slice_(operands[0], index)
    if kind == "transpose":
        return transpose(operands[0], axes)
    raise ValueError(f"unknown op kind: {kind!r}")


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of `targets` over positions where mask is 1."""
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count <= 0:
        raise GradientError("softmax_cross_entropy: mask selects no positions")
    picked = gather(log_softmax(logits, axis=-1), targets)
    return mul(sum_(mul(picked, Tensor(mask))), Tensor(-1.0 / count))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def _topological_order(root: Tensor) -> list:
    order = []
    seen = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> Dict[str, np.ndarray]:
    """
    Reverse-mode sweep from a scalar loss.

    Leaf gradients are added into `.grad` (additive across uses and calls).
    Returns a map from leaf name to its gradient for every named leaf reached.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    named: Dict[str, np.ndarray] = {}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node.name is not None:
                named[node.name] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return named


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam moments for exactly the trainable parameters, plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        trainable = {k: p for k, p in params.items() if p.requires_grad}
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
            m={k: np.zeros_like(p.data) for k, p in trainable.items()},
            v={k: np.zeros_like(p.data) for k, p in trainable.items()},
        )


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm <= 0 or total <= max_norm or total == 0.0:
        return dict(grads), total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> Tuple[Mapping[str, Tensor], OptimizerState]:
    """Bias-corrected Adam update of every trainable tensor in `params`, in place."""
    trainable = [k for k, p in params.items() if p.requires_grad]
    missing = [k for k in trainable if k not in grads]
    if missing:
        raise GradientError(f"adam_step: missing gradient for trainable parameters {missing[:5]}")
    unknown = [k for k in trainable if k not in state.m]
    if unknown:
        raise GradientError(f"adam_step: no optimizer moments for {unknown[:5]}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for k in trainable:
        g = np.asarray(grads[k], dtype=np.float64)
        p = params[k]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
