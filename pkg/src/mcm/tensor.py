"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array. Every op that involves a tensor with
``requires_grad`` records its inputs and a backward closure on the output;
the resulting DAG is the tape. `Tensor.backward` orders the DAG
topologically and replays the closures in reverse.

Values are float32 by default. Tests that compare against finite differences
switch to float64 with `default_dtype`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

PROB_FLOOR = 1e-9


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    global _DEFAULT_DTYPE
    prev, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, "Tensor()")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._consumed = False

    # construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._consumed = False
        out._op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @classmethod
    def zeros(cls, *shape: int, requires_grad=False, name="") -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad, name=name)

    @classmethod
    def ones(cls, *shape: int, requires_grad=False, name="") -> "Tensor":
        return cls(np.ones(shape), requires_grad=requires_grad, name=name)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._make(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

        return Tensor._make(self.data - other.data, (self, other), backward, "sub")

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(a * b, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._make(a / b, (self, other), backward, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other, self.dtype) / self

    def __pow__(self, p: float) -> "Tensor":
        a = self.data
        return Tensor._make(a**p, (self,), lambda g: (g * p * a ** (p - 1),), "pow")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # elementwise ------------------------------------------------------------

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        s = _stable_sigmoid(self.data)
        return Tensor._make(s, (self,), lambda g: (g * s * (1 - s),), "sigmoid")

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        return Tensor._make(t, (self,), lambda g: (g * (1 - t * t),), "tanh")

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        return Tensor._make(e, (self,), lambda g: (g * e,), "exp")

    def log(self) -> "Tensor":
        a = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a)
        return Tensor._make(out, (self,), lambda g: (g / a,), "log")

    def sqrt(self) -> "Tensor":
        r = np.sqrt(self.data)
        return Tensor._make(r, (self,), lambda g: (g * 0.5 / r,), "sqrt")

    # shape ------------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),), "reshape")

    def __getitem__(self, idx) -> "Tensor":
        shape, dtype = self.shape, self.data.dtype
        out = self.data[idx]
        basic = _is_basic_index(idx)

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(np.ascontiguousarray(out), (self,), backward, "getitem")

    # autodiff ---------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar, accumulating into leaf ``.grad``."""
        if self.data.size != 1 or self.ndim != 0:
            raise TapeError(f"backward() needs a scalar tensor, got shape {self.shape}")
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward()")
        if not self.requires_grad:
            raise TapeError("tensor is not attached to a live tape")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        # free the graph: saved activations are no longer needed
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._consumed = True


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative DFS post-order: inputs precede consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in items)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and needs no branch on the sign
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# free functions -----------------------------------------------------------


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; `a` may carry leading batch axes, `b` is 2-D."""
    if b.ndim != 2 or a.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data
    # fold batch axes into rows: one GEMM is much faster than numpy's stacked loop
    A2 = A.reshape(-1, A.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ B.T).reshape(A.shape) if a.requires_grad else None
        gb = A2.T @ g2 if b.requires_grad else None
        return ga, gb

    return Tensor._make((A2 @ B).reshape(*A.shape[:-1], B.shape[1]), (a, b), backward, "matmul")


def transpose(t: Tensor) -> Tensor:
    """Swap the two axes of a 2-D tensor."""
    return Tensor._make(np.ascontiguousarray(t.data.T), (t,), lambda g: (np.ascontiguousarray(g.T),), "transpose")


def relu(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._make(np.maximum(a, 0), (x,), lambda g: (g * (a > 0),), "relu")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    if x.shape[-1] < 2:
        raise ShapeError(f"softmax needs at least 2 entries on the last axis, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._make(s, (x,), backward, "softmax")


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of `labels` under row distributions `probs`."""
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"cross_entropy expects (B, C) probs and (B,) labels, got {probs.shape}, {labels.shape}")
    C = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    B = probs.shape[0]
    rows = np.arange(B)
    p = probs.data[rows, labels]
    clipped = np.maximum(p, PROB_FLOOR)
    loss = -np.log(clipped).mean()

    def backward(g):
        full = np.zeros_like(probs.data)
        full[rows, labels] = np.where(p > PROB_FLOOR, -1.0 / (B * clipped), 0.0)
        return (full * g,)

    return Tensor._make(np.asarray(loss, dtype=probs.dtype), (probs,), backward, "cross_entropy")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=ax))

    return Tensor._make(out, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=ax)) for i in range(len(tensors)))

    return Tensor._make(out, tuple(tensors), backward, "stack")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select with a constant boolean (or 0/1) condition."""
    c = np.asarray(cond).astype(bool)
    a_shape, b_shape = a.shape, b.shape

    def backward(g):
        return _unbroadcast(np.where(c, g, 0), a_shape), _unbroadcast(np.where(c, 0, g), b_shape)

    return Tensor._make(np.where(c, a.data, b.data).astype(a.dtype), (a, b), backward, "where")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
