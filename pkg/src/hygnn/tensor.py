"""Dense float64 tensors with reverse-mode autodiff over a recorded tape.

Operations on grad-tracked tensors are recorded onto the tape that is active
in the current thread (``with Tape() as tape: ...``).  Outside a tape every
operation is evaluated eagerly and its result is untracked, which is what the
finite-difference oracle and inference paths rely on.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class TensorError(ValueError):
    """Invalid tensor construction or use."""


class TapeError(RuntimeError):
    """Backward requested on something the tape cannot differentiate."""


class Tensor:
    """An N-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad_tracked", "_tape", "_node")

    def __init__(self, data, grad_tracked: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad_tracked = bool(grad_tracked)
        self._tape: Optional[Tape] = None
        self._node: int = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"expected a single-element tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad_tracked=True" if self.grad_tracked else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TensorError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def create_tensor(shape: Sequence[int], data: Sequence[float], grad_tracked: bool = False) -> Tensor:
    """Build a tensor from a row-major value list."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise TensorError(f"dimension sizes must be positive, got {list(shape)}")
    values = np.asarray(data, dtype=DTYPE).reshape(-1)
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise TensorError(
            f"shape {list(shape)} needs {int(np.prod(shape))} values, got {values.size}"
        )
    return Tensor(values.reshape(shape).copy(), grad_tracked=grad_tracked)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_local = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class GradientMap(dict):
    """Maps each tracked parameter tensor (by identity) to its gradient tensor."""

    def array(self, param: Tensor) -> np.ndarray:
        return self[param].data


@dataclass(eq=False)
class Tape:
    """Ordered record of the operations executed while the tape is active.

    Nodes are appended as operations run, so the list is already in
    topological order.  A tape belongs to one thread.
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        out.grad_tracked = True
        out._tape = self
        out._node = len(self.nodes)
        self.nodes.append(_Node(out, inputs, backward))

    def leaves(self) -> list[Tensor]:
        """Tracked leaf tensors consumed by recorded operations, first use first."""
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.grad_tracked and t._tape is None and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())

    def backward(self, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> GradientMap:
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.size != 1 or loss.ndim != 1:
            raise TapeError(f"loss must have shape [1], got {list(loss.shape)}")

        node_grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        leaf_grads: dict[int, np.ndarray] = {}
        node_grads[loss._node] = np.ones_like(loss.data)

        for idx in range(loss._node, -1, -1):
            g = node_grads[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            node_grads[idx] = None
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.grad_tracked:
                    continue
                if t._tape is self:
                    prev = node_grads[t._node]
                    node_grads[t._node] = gi if prev is None else prev + gi
                elif t._tape is None:
                    prev = leaf_grads.get(id(t))
                    leaf_grads[id(t)] = gi if prev is None else prev + gi

        targets = self.leaves() if params is None else list(params)
        grads = GradientMap()
        for p in targets:
            g = leaf_grads.get(id(p))
            grads[p] = Tensor(np.zeros_like(p.data) if g is None else g)
        return grads


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> GradientMap:
    """Gradients of a shape-[1] loss with respect to tracked leaves.

    With ``params`` given, every listed tensor appears in the result and the
    ones the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise TapeError("loss is not on a tape; build it inside `with Tape():`")
    return loss._tape.backward(loss, params)


def apply_op(value: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap a forward result and record its backward rule if gradients are needed."""
    out = Tensor(value)
    tape = _active_tape()
    if tape is None:
        return out
    tracked = False
    for t in inputs:
        if t.grad_tracked:
            if t._tape is not None and t._tape is not tape:
                raise TapeError("operand was recorded on a different tape")
            tracked = True
    if tracked:
        tape.record(out, tuple(inputs), backward_fn)
    return out


# ---------------------------------------------------------------------------
# Elementwise arithmetic and reductions
# ---------------------------------------------------------------------------


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply_op(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply_op(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply_op(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return apply_op(-a.data, (a,), lambda g: (-g,))


def _as_scalar_shape(v: np.ndarray) -> np.ndarray:
    return v.reshape(1) if v.ndim == 0 else v


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum; a full reduction yields shape [1]."""
    value = _as_scalar_shape(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op(value, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return apply_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2:
        raise TensorError("matmul expects 2-D operands")
    return apply_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def square(a: Tensor) -> Tensor:
    return apply_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> Tensor:
    """Central-difference gradient of a scalar-valued ``f`` at ``x``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data, dtype=DTYPE)
    grad = np.empty_like(base)
    flat = grad.reshape(-1)
    for k in range(base.size):
        probe = base.copy()
        probe.flat[k] += eps
        hi = _scalar(f(Tensor(probe)))
        probe.flat[k] = base.flat[k] - eps
        lo = _scalar(f(Tensor(probe)))
        flat[k] = (hi - lo) / (2.0 * eps)
    return Tensor(grad)


def _scalar(value) -> float:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=DTYPE)
    if arr.size != 1:
        raise TensorError(f"function must return a scalar, got shape {list(arr.shape)}")
    return float(arr.reshape(-1)[0])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |n|) over elements."""
    analytic = np.asarray(analytic, dtype=DTYPE)
    numeric = np.asarray(numeric, dtype=DTYPE)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
