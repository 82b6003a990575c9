"""Tape-based reverse-mode differentiation over small dense numpy arrays.

A :class:`Tape` records primitives eagerly. Each recorded node keeps its value
and the indices of its inputs, so the reverse sweep is a single pass over the
record in reverse order. Tapes are cheap and meant to be rebuilt for every
loss evaluation.
"""

from __future__ import annotations

import builtins
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    """Inputs of a primitive have incompatible shapes."""


class NonFiniteGradientError(FloatingPointError):
    """A NaN or infinity appeared during the reverse sweep."""


class ParamStore(Mapping):
    """Named float64 tensors, kept in insertion order."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._tensors: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} has non-finite entries")
        self._tensors[name] = arr

    def set_unchecked(self, name: str, arr: np.ndarray) -> None:
        self._tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def copy(self) -> "ParamStore":
        return type(self)({k: v.copy() for k, v in self._tensors.items()})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._tensors.items()}

    def zeros_like(self) -> "GradStore":
        return GradStore({k: np.zeros_like(v) for k, v in self._tensors.items()})

    def global_norm(self) -> float:
        return float(np.sqrt(builtins.sum(float(np.sum(v * v)) for v in self._tensors.values())))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}{list(v.shape)}" for k, v in self._tensors.items())
        return f"{type(self).__name__}({inner})"


class GradStore(ParamStore):
    """Gradients, shape-compatible with the ParamStore they were taken against."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {shapes}") from exc


# Each primitive is (forward, vjp). forward(*values, **attrs) -> value.
# vjp(grad_out, out, *values, **attrs) -> tuple of input gradients (None = no flow).


def _affine_fwd(x, w, b):
    if w.ndim != 2 or b.shape != (w.shape[1],) or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: x{x.shape} W{w.shape} b{b.shape}")
    return x @ w + b


def _affine_vjp(g, out, x, w, b):
    if x.ndim == 1:
        return g @ w.T, np.outer(x, g), g
    return g @ w.T, x.T @ g, g.sum(axis=0)


def _binary_fwd(fn):
    def fwd(a, b):
        _broadcast_shape(a.shape, b.shape)
        return fn(a, b)

    return fwd


def _add_vjp(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_vjp(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_vjp(g, out, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _div_vjp(g, out, a, b):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _minimum_vjp(g, out, a, b):
    # ties go to the first argument
    take_a = np.broadcast_to(a <= b, g.shape)
    return (
        _unbroadcast(np.where(take_a, g, 0.0), a.shape),
        _unbroadcast(np.where(take_a, 0.0, g), b.shape),
    )


def _maximum_vjp(g, out, a, b):
    take_a = np.broadcast_to(a >= b, g.shape)
    return (
        _unbroadcast(np.where(take_a, g, 0.0), a.shape),
        _unbroadcast(np.where(take_a, 0.0, g), b.shape),
    )


def _clip_fwd(x, *, lo, hi):
    if lo > hi:
        raise ValueError(f"clip bounds reversed: {lo} > {hi}")
    return np.clip(x, lo, hi)


def _clip_vjp(g, out, x, *, lo, hi):
    # boundary points count as interior
    return (np.where((x >= lo) & (x <= hi), g, 0.0),)


def _sum_fwd(x, *, axis=None):
    return np.asarray(np.sum(x, axis=axis))


def _sum_vjp(g, out, x, *, axis=None):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _mean_fwd(x, *, axis=None):
    return np.asarray(np.mean(x, axis=axis))


def _mean_vjp(g, out, x, *, axis=None):
    count = x.size if axis is None else x.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, x.shape).copy(),)


def _prod_fwd(x, *, axis=-1):
    return np.asarray(np.prod(x, axis=axis))


def _prod_vjp(g, out, x, *, axis=-1):
    # exclusive prefix/suffix products: exact and safe at zeros
    xs = np.moveaxis(x, axis, -1)
    ones = np.ones(xs.shape[:-1] + (1,))
    prefix = np.concatenate([ones, np.cumprod(xs[..., :-1], axis=-1)], axis=-1)
    suffix = np.concatenate(
        [np.cumprod(xs[..., :0:-1], axis=-1)[..., ::-1], ones], axis=-1
    )
    others = np.moveaxis(prefix * suffix, -1, axis)
    return (np.expand_dims(g, axis) * others,)


def _scale_fwd(x, *, c):
    return x * c


def _shift_fwd(x, *, c):
    return x + c


PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "affine": (_affine_fwd, _affine_vjp),
    "tanh": (np.tanh, lambda g, out, x: (g * (1.0 - out * out),)),
    "exp": (np.exp, lambda g, out, x: (g * out,)),
    "log": (np.log, lambda g, out, x: (g / x,)),
    "neg": (np.negative, lambda g, out, x: (-g,)),
    "square": (np.square, lambda g, out, x: (2.0 * x * g,)),
    "add": (_binary_fwd(np.add), _add_vjp),
    "sub": (_binary_fwd(np.subtract), _sub_vjp),
    "mul": (_binary_fwd(np.multiply), _mul_vjp),
    "div": (_binary_fwd(np.divide), _div_vjp),
    "minimum": (_binary_fwd(np.minimum), _minimum_vjp),
    "maximum": (_binary_fwd(np.maximum), _maximum_vjp),
    "clip": (_clip_fwd, _clip_vjp),
    "sum": (_sum_fwd, _sum_vjp),
    "mean": (_mean_fwd, _mean_vjp),
    "prod": (_prod_fwd, _prod_vjp),
    "scale": (_scale_fwd, lambda g, out, x, *, c: (g * c,)),
    "shift": (_shift_fwd, lambda g, out, x, *, c: (g,)),
}


@dataclass(eq=False)
class Node:
    tape: "Tape"
    index: int
    value: np.ndarray
    op: str | None = None
    inputs: tuple[int, ...] = ()
    attrs: dict = field(default_factory=dict)
    param: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.tape.constant(other)

    def __add__(self, other):
        if np.isscalar(other):
            return self.tape.record("shift", self, c=float(other))
        return self.tape.record("add", self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return self.tape.record("shift", self, c=-float(other))
        return self.tape.record("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.record("sub", self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", self, c=float(other))
        return self.tape.record("mul", self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", self, c=1.0 / float(other))
        return self.tape.record("div", self, self._lift(other))

    def __neg__(self):
        return self.tape.record("neg", self)

    def __repr__(self) -> str:
        return f"Node(#{self.index}, op={self.op}, shape={self.shape})"


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in evaluation order, so the record is already a
    topological order and the reverse sweep just walks it backwards.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, value, **kwargs) -> Node:
        node = Node(self, len(self.nodes), np.asarray(value, dtype=np.float64), **kwargs)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._append(np.array(value, dtype=np.float64))

    def param(self, store: ParamStore, name: str) -> Node:
        return self._append(store[name], param=name)

    def params(self, store: ParamStore) -> dict[str, Node]:
        return {name: self.param(store, name) for name in store}

    def record(self, primitive: str, *inputs: Node, **attrs) -> Node:
        try:
            fwd, _ = PRIMITIVES[primitive]
        except KeyError:
            raise ValueError(f"unknown primitive {primitive!r}") from None
        for node in inputs:
            if node.tape is not self or self.nodes[node.index] is not node:
                raise ValueError("input node is not on this tape")
        value = fwd(*(n.value for n in inputs), **attrs)
        return self._append(value, op=primitive, inputs=tuple(n.index for n in inputs), attrs=attrs)

    def backward(self, root: Node, store: ParamStore | None = None) -> GradStore:
        """Gradient of the scalar ``root`` with respect to every parameter leaf.

        If ``store`` is given the result has exactly its names and shapes, with
        zeros for parameters the root does not depend on.
        """
        if root.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * (root.index + 1)
        grads[root.index] = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads[node.index]
            if g is None or node.op is None:
                continue
            _, vjp = PRIMITIVES[node.op]
            in_vals = [self.nodes[i].value for i in node.inputs]
            for i, gi in zip(node.inputs, vjp(g, node.value, *in_vals, **node.attrs)):
                if gi is not None:
                    grads[i] = gi if grads[i] is None else grads[i] + gi

        out = store.zeros_like() if store is not None else GradStore()
        seen: set[str] = set()
        for node in self.nodes[: root.index + 1]:
            if node.param is None or grads[node.index] is None:
                continue
            if store is not None and node.param not in store:
                continue
            g = grads[node.index]
            if g.shape != node.shape:
                g = np.broadcast_to(g, node.shape)
            if node.param in seen:
                g = out[node.param] + g
            seen.add(node.param)
            out.set_unchecked(node.param, np.array(g, dtype=np.float64))
        # NaN/inf anywhere upstream propagates into the leaf gradients
        for name, g in out.items():
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        return out


def forward_record(tape: Tape, primitive: str, inputs, **attrs) -> Node:
    """Append ``primitive`` applied to ``inputs``; the value is computed immediately."""
    return tape.record(primitive, *inputs, **attrs)


def backward(tape: Tape, root: Node, store: ParamStore | None = None) -> GradStore:
    return tape.backward(root, store)


# convenience wrappers so loss code reads like arithmetic

def affine(x: Node, w: Node, b: Node) -> Node:
    return x.tape.record("affine", x, w, b)


def tanh(x: Node) -> Node:
    return x.tape.record("tanh", x)


def exp(x: Node) -> Node:
    return x.tape.record("exp", x)


def log(x: Node) -> Node:
    return x.tape.record("log", x)


def square(x: Node) -> Node:
    return x.tape.record("square", x)


def minimum(a: Node, b) -> Node:
    return a.tape.record("minimum", a, a._lift(b))


def maximum(a: Node, b) -> Node:
    return a.tape.record("maximum", a, a._lift(b))


def clip(x: Node, lo: float, hi: float) -> Node:
    return x.tape.record("clip", x, lo=float(lo), hi=float(hi))


def sum(x: Node, axis: int | None = None) -> Node:  # noqa: A001
    return x.tape.record("sum", x, axis=axis)


def mean(x: Node, axis: int | None = None) -> Node:
    return x.tape.record("mean", x, axis=axis)


def prod(x: Node, axis: int = -1) -> Node:
    return x.tape.record("prod", x, axis=axis)
