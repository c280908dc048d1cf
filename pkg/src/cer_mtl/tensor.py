"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable operation produces a :class:`Tensor` that remembers the
inputs it was computed from together with a backward rule.  Calling
:func:`backward` on a scalar result records the reachable graph into a
:class:`Tape` (a topologically ordered node list) and walks it in reverse,
accumulating gradients into the ``grad`` slot of every leaf that requires one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Backward was requested on something that cannot be differentiated."""


class GradientCheckError(RuntimeError):
    """A function evaluated during a gradient check produced a non-finite value."""

    def __init__(self, message: str, parameter: str | None = None):
        super().__init__(message)
        self.parameter = parameter


@dataclass(eq=False)
class Node:
    """One recorded operation: its inputs and how to push a gradient through it."""

    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str = ""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "__weakref__")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, _node: Node | None = None):
        arr = np.array(data, dtype=DTYPE)  # always copies: tensors own their storage
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad or _node is not None)
        self._node = _node

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape_id(self) -> int | None:
        """Identity of the graph node producing this tensor (None for leaves / detached)."""
        if self._node is None:
            return id(self) if self.requires_grad else None
        return id(self._node)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def tanh(self):
        return elementwise("tanh", self)

    def sigmoid(self):
        return elementwise("sigmoid", self)

    def square(self):
        return elementwise("square", self)

    def sqrt(self):
        return elementwise("sqrt", self)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def max(self, axis=None):
        return reduce("max", self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], rule, name: str) -> Tensor:
    if any(t.requires_grad for t in inputs):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = True
        out._node = Node(inputs, rule, name)
        return out
    return Tensor(data)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# Backward helpers for unary ops are module level so tests can swap them out.
def _tanh_grad(y: np.ndarray) -> np.ndarray:
    return 1.0 - y * y


def _sigmoid_grad(y: np.ndarray) -> np.ndarray:
    return y * (1.0 - y)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


BINARY_KINDS = ("add", "sub", "mul", "div")
UNARY_KINDS = ("tanh", "sigmoid", "square", "sqrt", "neg")


def elementwise(kind: str, a, b=None) -> Tensor:
    """Apply an elementwise operation, broadcasting binary operands numpy-style."""
    a = as_tensor(a)
    if kind in BINARY_KINDS:
        if b is None:
            raise TypeError(f"{kind} needs two operands")
        b = as_tensor(b)
        _broadcast_shape(a, b)
        x, y = a.data, b.data
        if kind == "add":
            out = x + y

            def rule(g):
                return unbroadcast(g, x.shape), unbroadcast(g, y.shape)

        elif kind == "sub":
            out = x - y

            def rule(g):
                return unbroadcast(g, x.shape), unbroadcast(-g, y.shape)

        elif kind == "mul":
            out = x * y

            def rule(g):
                return unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)

        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = x / y

            def rule(g):
                with np.errstate(divide="ignore", invalid="ignore"):
                    ga = g / y
                    gb = -g * x / (y * y)
                return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

        return _make(out, (a, b), rule, kind)

    if kind not in UNARY_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if b is not None:
        raise TypeError(f"{kind} takes one operand")
    x = a.data
    if kind == "tanh":
        out = np.tanh(x)

        def rule(g):
            return (g * _tanh_grad(out),)

    elif kind == "sigmoid":
        out = _sigmoid(x)

        def rule(g):
            return (g * _sigmoid_grad(out),)

    elif kind == "square":
        out = x * x

        def rule(g):
            return (2.0 * g * x,)

    elif kind == "sqrt":
        with np.errstate(invalid="ignore"):
            out = np.sqrt(x)

        def rule(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                return (g * 0.5 / out,)

    else:
        out = -x

        def rule(g):
            return (-g,)

    return _make(out, (a,), rule, kind)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy ``matmul`` semantics (1-D operands and batch broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data
    if x.ndim == 0 or y.ndim == 0:
        raise ShapeError("matmul needs operands of rank >= 1")
    k_a = x.shape[-1]
    k_b = y.shape[0] if y.ndim == 1 else y.shape[-2]
    if k_a != k_b:
        raise ShapeError(f"matmul inner dimensions differ: {x.shape} @ {y.shape}")
    try:
        out = np.matmul(x, y)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def rule(g):
        x2 = x[None, :] if x.ndim == 1 else x
        y2 = y[:, None] if y.ndim == 1 else y
        full = np.broadcast_shapes(x2.shape[:-2], y2.shape[:-2]) + (x2.shape[-2], y2.shape[-1])
        g2 = g.reshape(full)
        ga = unbroadcast(g2 @ np.swapaxes(y2, -1, -2), x2.shape).reshape(x.shape)
        gb = unbroadcast(np.swapaxes(x2, -1, -2) @ g2, y2.shape).reshape(y.shape)
        return ga, gb

    return _make(out, (a, b), rule, "matmul")


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    return tuple(sorted(norm))


def reduce(kind: str, a, axis=None) -> Tensor:
    """Sum, mean or max over ``axis`` (all axes when None).

    ``max`` routes the whole gradient to the first maximal element of each
    reduced slice.
    """
    a = as_tensor(a)
    x = a.data
    if x.size == 0:
        raise ShapeError("cannot reduce an empty tensor")
    axes = _norm_axis(axis, x.ndim)
    kept = tuple(1 if axes is None or i in axes else n for i, n in enumerate(x.shape))

    if kind == "sum":
        out = x.sum(axis=axes)

        def rule(g):
            return (np.broadcast_to(g.reshape(kept), x.shape).copy(),)

    elif kind == "mean":
        count = x.size if axes is None else math.prod(x.shape[i] for i in axes)
        out = x.mean(axis=axes)

        def rule(g):
            return (np.broadcast_to(g.reshape(kept) / count, x.shape).copy(),)

    elif kind == "max":
        if axes is None:
            flat = int(np.argmax(x))  # first occurrence on ties
            out = x.reshape(-1)[flat]

            def rule(g):
                gx = np.zeros(x.size)
                gx[flat] = float(np.asarray(g).reshape(()))
                return (gx.reshape(x.shape),)

        else:
            if len(axes) != 1:
                raise ShapeError("max supports a single axis or a full reduction")
            ax = axes[0]
            idx = np.expand_dims(np.argmax(x, axis=ax), ax)
            out = np.take_along_axis(x, idx, axis=ax).squeeze(ax)

            def rule(g):
                gx = np.zeros_like(x)
                np.put_along_axis(gx, idx, np.expand_dims(g, ax), axis=ax)
                return (gx,)

    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _make(np.asarray(out, dtype=DTYPE), (a,), rule, kind)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim if ndim else 0
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            n != m for i, (n, m) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax
        ):
            raise ShapeError(f"concat shapes {[u.shape for u in tensors]} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def rule(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _make(out, tuple(tensors), rule, "concat")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.array(x[index], dtype=DTYPE)

    def rule(g):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(out, (a,), rule, "getitem")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    x = a.data
    try:
        out = x.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def rule(g):
        return (g.reshape(x.shape),)

    return _make(out, (a,), rule, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.transpose(x, axes)
    inverse = None if axes is None else np.argsort(axes)

    def rule(g):
        return (np.transpose(g, inverse),)

    return _make(out, (a,), rule, "transpose")


@dataclass
class Tape:
    """Topologically ordered record of the operations reachable from a root."""

    nodes: list[tuple[Tensor, Node]] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[tuple[Tensor, Node]] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if t._node is None:
                continue
            if expanded:
                order.append((t, t._node))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t._node.inputs:
                if inp._node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        out, seen = [], set()
        for _, node in self.nodes:
            for inp in node.inputs:
                if inp._node is None and inp.requires_grad and id(inp) not in seen:
                    seen.add(id(inp))
                    out.append(inp)
        return out


def backward(root: Tensor) -> Tape:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if root.size != 1:
        raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise TapeError("root is not on a tape (no input requires grad)")
    if root._node is None:
        root.grad = np.ones_like(root.data) if root.grad is None else root.grad + 1.0
        return Tape([])
    tape = Tape.record(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t, node in reversed(tape.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    return tape


def zero_grad(params: Iterable[Tensor] | Mapping[str, Tensor]) -> None:
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.grad = None


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_parameter: dict[str, float]
    worst: str | None

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradient_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    point: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare taped gradients of ``f`` against two-sided finite differences.

    ``point`` maps parameter names to leaf tensors which ``f`` reads.  The
    relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.  When
    ``max_coords`` is set, at most that many coordinates per parameter are
    probed (chosen with ``rng``).
    """
    zero_grad(point)
    for p in point.values():
        p.requires_grad = True
    value = f(point)
    if not np.isfinite(value.data).all():
        raise GradientCheckError("function is non-finite at the check point")
    if value.requires_grad:
        backward(value)
    rng = rng or np.random.default_rng(0)

    per_param: dict[str, float] = {}
    for name, p in point.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(analytic).all():
            raise GradientCheckError(f"non-finite analytic gradient for {name}", name)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = f(point).item()
            flat[i] = orig - eps
            down = f(point).item()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise GradientCheckError(f"non-finite value while perturbing {name}[{i}]", name)
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        per_param[name] = worst
    zero_grad(point)
    top = max(per_param, key=per_param.get) if per_param else None
    return GradCheckResult(per_param[top] if top else 0.0, per_param, top)
