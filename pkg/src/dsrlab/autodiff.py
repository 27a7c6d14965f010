"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs require gradients.
Node ids are assigned in creation order, which is a topological order, so
:meth:`Tape.backward` is a single reverse sweep.

Tapes are define-by-run: build a fresh one per training step, either
explicitly with ``with Tape():`` or implicitly (the first recorded op with
only leaf inputs opens a new tape).

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> grads = backward((x * x).sum())
    >>> grads[x]
    array([2., 4.])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "backward",
    "no_grad",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "shift",
    "exp",
    "log",
    "tanh",
    "relu",
    "clip",
    "softmax_rows",
    "sum",
    "mean",
    "grad_reverse",
    "concat_cols",
    "slice_cols",
    "slice_rows",
]

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class no_grad:
    """Context manager: operations inside record nothing."""

    def __enter__(self):
        _local.no_grad = getattr(_local, "no_grad", 0) + 1

    def __exit__(self, *exc):
        _local.no_grad -= 1


class _Node:
    __slots__ = ("op", "inputs", "backward_fn", "shape")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable | None, shape=None):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.shape = shape


class Tape:
    """Append-only record of operations, one gradient slot per node."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def _add(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _register_leaf(self, t: "Tensor") -> None:
        t._tape = self
        t.node_id = self._add(_Node("leaf", (), None, t.shape))

    def backward(self, loss: "Tensor") -> "Gradients":
        if loss._tape is not self:
            raise ContractError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        slots: list = [None] * len(self.nodes)
        slots[loss.node_id] = np.ones_like(loss.data)
        for i in range(loss.node_id, -1, -1):
            g = slots[i]
            node = self.nodes[i]
            if g is None or node.backward_fn is None:
                continue
            for src, gi in zip(node.inputs, node.backward_fn(g)):
                if src is None or gi is None:
                    continue
                if slots[src] is None:
                    slots[src] = gi
                else:
                    slots[src] = slots[src] + gi
        return Gradients(self, slots)


class Gradients(dict):
    """Mapping ``node_id -> ndarray`` for every node the loss depends on.

    Indexing with a :class:`Tensor` looks up its node on the producing tape;
    a requires-grad tensor the loss never touched maps to zeros.
    """

    def __init__(self, tape: Tape, slots: list):
        super().__init__((i, g) for i, g in enumerate(slots) if g is not None)
        self.tape = tape
        for i, node in enumerate(tape.nodes):
            if node.op == "leaf" and i not in self:
                self[i] = np.zeros(node.shape)

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            if key._tape is not self.tape or key.node_id not in self:
                return np.zeros_like(key.data)
            return dict.__getitem__(self, key.node_id)
        return dict.__getitem__(self, key)


class Tensor:
    """Dense float64 array, optionally recorded on a tape."""

    __slots__ = ("data", "requires_grad", "node_id", "_tape", "_leaf", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape: Tape | None = None
        self._leaf = True
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor({self.data!r}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __truediv__ = lambda self, c: scale(self, 1.0 / c)

    def sum(self, axis=None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> Gradients:
    """Gradients of a scalar ``loss`` with respect to everything on its tape."""
    if loss._tape is None:
        raise ContractError("loss is not on a tape (no input requires grad)")
    return loss._tape.backward(loss)


def _resolve_tape(inputs: Sequence[Tensor]) -> Tape:
    stack = _tape_stack()
    if stack:
        return stack[-1]
    tape = None
    for t in inputs:
        if not t._leaf:
            if tape is None:
                tape = t._tape
            elif t._tape is not tape:
                raise ContractError("inputs are recorded on different tapes")
    return tape if tape is not None else Tape()


def _record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn) -> Tensor:
    result = Tensor(out)
    if getattr(_local, "no_grad", 0) or not any(t.requires_grad for t in inputs):
        return result
    tape = _resolve_tape(inputs)
    ids = []
    for t in inputs:
        if not t.requires_grad:
            ids.append(None)
            continue
        if t._tape is not tape:
            if not t._leaf:
                raise ContractError("non-leaf tensor from another tape")
            tape._register_leaf(t)
        ids.append(t.node_id)
    result.requires_grad = True
    result._leaf = False
    result._tape = tape
    result.node_id = tape._add(_Node(op, tuple(ids), backward_fn))
    return result


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.sum(axis=0)


# -- binary elementwise --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, b)
    if isinstance(a, (int, float)):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


# -- unary elementwise ---------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def shift(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _record("shift", (a,), a.data + float(c), lambda g: (g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflow")
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if np.any(ad <= 0) or np.any(np.isnan(ad)):
        raise DomainError("log of non-positive value")
    return _record("log", (a,), np.log(ad), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at exactly 0
    return _record("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def clip(a, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record("clip", (a,), np.clip(a.data, lo, hi), lambda g: (g * inside,))


# -- rows, reductions ----------------------------------------------------


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[1] < 2:
        raise DimensionError(f"softmax_rows needs n x C with C >= 2, got {a.shape}")
    e = np.exp(a.data - a.data.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return _record("softmax", (a,), s,
                   lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        return
    if not isinstance(axis, (int, np.integer)) or not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"invalid axis {axis!r} for shape {a.shape}")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    _check_axis(a, axis)
    shape = a.shape
    if axis is None:
        return _record("sum", (a,), np.asarray(a.data.sum()),
                       lambda g: (np.broadcast_to(g, shape).copy(),))
    return _record("sum", (a,), a.data.sum(axis=axis),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def grad_reverse(a, lam: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-lam``."""
    a = as_tensor(a)
    lam = float(lam)
    if not np.isfinite(lam):
        raise ContractError("grad_reverse coefficient must be finite")
    return _record("grad_reverse", (a,), a.data, lambda g: (g * -lam,))


def concat_cols(parts: Iterable) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if any(p.ndim != 2 for p in parts) or len({p.shape[0] for p in parts}) != 1:
        raise DimensionError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])
    return _record("concat", tuple(parts), np.concatenate([p.data for p in parts], axis=1),
                   lambda g: tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts))))


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _record("slice_cols", (a,), a.data[:, start:stop], bw)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 1 or not 0 <= start < stop <= a.shape[0]:
        raise DimensionError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _record("slice_rows", (a,), a.data[start:stop], bw)
