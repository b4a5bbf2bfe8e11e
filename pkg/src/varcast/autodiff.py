"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: only the operations the forecasting model composes, each
with a registered backward rule. Everything is 64-bit; gradient checks at
1e-5 step sizes are not trustworthy in single precision. The engine is
single-threaded: one tape is active at a time and records every operation
whose inputs require gradients, in execution (hence topological) order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    NumericDomainError,
    UnsupportedDownsampleError,
)

Array = np.ndarray


def _as_f64(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Dense row-major float64 array, optionally tracked on the gradient tape.

    Immutable by convention after creation, except for ``grad`` which is
    accumulated into by backward passes and ``data`` which optimizers update
    between steps (never inside a recorded graph).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = _as_f64(data)
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; scalars and arrays are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _ensure(other))

    def __radd__(self, other):
        return add(_ensure(other), self)

    def __sub__(self, other):
        return sub(self, _ensure(other))

    def __rsub__(self, other):
        return sub(_ensure(other), self)

    def __mul__(self, other):
        return mul(self, _ensure(other))

    def __rmul__(self, other):
        return mul(_ensure(other), self)

    def __truediv__(self, other):
        return div(self, _ensure(other))

    def __rtruediv__(self, other):
        return div(_ensure(other), self)

    def __matmul__(self, other):
        return matmul(self, _ensure(other))

    def __neg__(self):
        return negate(self)

    def sum(self, axis: int | None = None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: Sequence[int]):
        return reshape(self, shape)


def _ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class TapeNode:
    """One executed operation: its inputs, its output, and a backward rule.

    The rule maps the gradient at the output to a tuple of gradients aligned
    with ``inputs`` (``None`` for inputs that need no gradient).
    """

    __slots__ = ("inputs", "output", "backward_rule")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_rule: Callable[[Array], tuple[Array | None, ...]]):
        self.inputs = inputs
        self.output = output
        self.backward_rule = backward_rule


class GradTape:
    """Append-only record of executed operations in topological order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_tape_stack: list[GradTape] = [GradTape()]
_grad_enabled: list[bool] = [True]


def active_tape() -> GradTape:
    return _tape_stack[-1]


@contextlib.contextmanager
def fresh_tape():
    """Push a new tape for the duration of the block (graphs do not leak out)."""
    tape = GradTape()
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextlib.contextmanager
def no_grad():
    """Disable recording; forward math still runs with all domain checks."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def _record(inputs: tuple[Tensor, ...], out_data: Array, rule) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled[-1] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().nodes.append(TapeNode(inputs, out, rule))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over broadcast dimensions back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# binary ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record((a, b), out, rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = a.data - b.data

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record((a, b), out, rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = a.data * b.data

    def rule(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record((a, b), out, rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if np.any(b.data == 0.0):
        raise NumericDomainError("division by zero; guard the denominator with an epsilon")
    out = a.data / b.data

    def rule(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record((a, b), out, rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs 2-D or higher operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions incompatible: {a.shape} @ {b.shape}") from exc

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record((a, b), out, rule)


# ---------------------------------------------------------------------------
# unary ops


def negate(x: Tensor) -> Tensor:
    x = _ensure(x)
    return _record((x,), -x.data, lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    x = _ensure(x)
    out = np.exp(x.data)
    return _record((x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = _ensure(x)
    if np.any(x.data <= 0.0):
        raise NumericDomainError("log requires strictly positive input")
    out = np.log(x.data)
    return _record((x,), out, lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    x = _ensure(x)
    out = np.tanh(x.data)
    return _record((x,), out, lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    x = _ensure(x)
    out = np.maximum(x.data, 0.0)
    return _record((x,), out, lambda g: (g * (x.data > 0.0),))


def _sigmoid(x: Array) -> Array:
    # Split by sign so neither branch exponentiates a large positive value.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: Tensor) -> Tensor:
    x = _ensure(x)
    out = np.logaddexp(0.0, x.data)
    return _record((x,), out, lambda g: (g * _sigmoid(x.data),))


def square(x: Tensor) -> Tensor:
    x = _ensure(x)
    return _record((x,), x.data * x.data, lambda g: (g * 2.0 * x.data,))


def sqrt(x: Tensor) -> Tensor:
    x = _ensure(x)
    if np.any(x.data < 0.0):
        raise NumericDomainError("sqrt requires non-negative input")
    out = np.sqrt(x.data)

    def rule(g):
        return (g / (2.0 * out),)

    return _record((x,), out, rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _ensure(x)
    _check_axis(x.data, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def rule(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record((x,), out, rule)


# ---------------------------------------------------------------------------
# reductions


def _check_axis(data: Array, axis: int | None) -> None:
    if axis is None:
        if data.size == 0:
            raise DimensionError("cannot reduce an empty tensor")
        return
    if not -data.ndim <= axis < data.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {data.shape}")
    if data.shape[axis] == 0:
        raise DimensionError(f"cannot reduce over empty axis {axis} of shape {data.shape}")


def _spread(g: Array, shape: tuple[int, ...], axis: int | None, keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _ensure(x)
    _check_axis(x.data, axis)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def rule(g):
        return (np.ascontiguousarray(_spread(g, x.data.shape, axis, keepdims)),)

    return _record((x,), out, rule)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _ensure(x)
    _check_axis(x.data, axis)
    n = x.data.size if axis is None else x.data.shape[axis]
    out = np.mean(x.data, axis=axis, keepdims=keepdims)

    def rule(g):
        return (np.ascontiguousarray(_spread(g, x.data.shape, axis, keepdims)) / n,)

    return _record((x,), out, rule)


def variance(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Biased variance (divisor is the number of reduced elements)."""
    x = _ensure(x)
    _check_axis(x.data, axis)
    n = x.data.size if axis is None else x.data.shape[axis]
    out = np.var(x.data, axis=axis, keepdims=keepdims)
    centered = x.data - np.mean(x.data, axis=axis, keepdims=True)

    def rule(g):
        return (2.0 * centered * _spread(g, x.data.shape, axis, keepdims) / n,)

    return _record((x,), out, rule)


# ---------------------------------------------------------------------------
# shape ops


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(_ensure(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    _check_axis(tensors[0].data, axis)
    first = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(first) or any(
            s[i] != first[i] for i in range(len(s)) if i != axis % len(s)
        ):
            raise DimensionError(f"concat shapes disagree off-axis: {first} vs {s}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, cuts, axis=axis))

    return _record(tensors, out, rule)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = _ensure(x)
    _check_axis(x.data, axis)
    n = x.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"slice [{start}:{stop}) invalid for axis {axis} of shape {x.shape}")
    index = [np.s_[:]] * x.data.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)
    out = x.data[index]

    def rule(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _record((x,), out, rule)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _ensure(x)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)

    def rule(g):
        return (g.reshape(x.data.shape),)

    return _record((x,), out, rule)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    x = _ensure(x)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    out = np.ascontiguousarray(np.transpose(x.data, perm))
    inverse = tuple(np.argsort(perm))

    def rule(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _record((x,), out, rule)


def nearest_interpolate(x: Tensor, target_len: int, axis: int = 0) -> Tensor:
    """Upsample along ``axis`` by nearest neighbor: output j reads source
    floor(j * src_len / target_len). Downsampling is rejected."""
    x = _ensure(x)
    _check_axis(x.data, axis)
    src_len = x.data.shape[axis]
    if target_len < src_len:
        raise UnsupportedDownsampleError(
            f"nearest_interpolate only upsamples: target {target_len} < source {src_len}")
    idx = (np.arange(target_len) * src_len) // target_len
    out = np.take(x.data, idx, axis=axis)

    def rule(g):
        moved = np.moveaxis(g, axis, 0)
        acc = np.zeros_like(np.moveaxis(x.data, axis, 0))
        np.add.at(acc, idx, moved)
        return (np.ascontiguousarray(np.moveaxis(acc, 0, axis)),)

    return _record((x,), out, rule)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def _flow_gradients(tape: GradTape, loss: Tensor) -> list[tuple[Tensor, Array]]:
    """Walk the tape once in reverse; return (tensor, grad) pairs.

    Tensors the loss does not reach get explicit zeros, so "no dependence"
    reads as a zero gradient rather than a missing one.
    """
    flow: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = flow.get(id(node.output))
        if g_out is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward_rule(g_out)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            holders[key] = tensor
            if key in flow:
                flow[key] = flow[key] + grad
            else:
                flow[key] = grad
    for node in tape.nodes:
        for tensor in (*node.inputs, node.output):
            if tensor.requires_grad and id(tensor) not in flow:
                flow[id(tensor)] = np.zeros_like(tensor.data)
                holders[id(tensor)] = tensor
    return [(holders[key], grad) for key, grad in flow.items()]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Calling again without clearing grads accumulates on top of the previous
    pass. Each tape node is visited exactly once per call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if not tape.nodes:
        raise ContractError("backward called with an empty gradient tape")
    for tensor, grad in _flow_gradients(tape, loss):
        grad = grad.reshape(tensor.data.shape)
        if tensor.grad is None:
            tensor.grad = grad.copy()
        else:
            tensor.grad = tensor.grad + grad


def check_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of scalar-valued ``f`` at ``x`` against
    central finite differences.

    Returns max over coordinates of |autodiff - numeric| / (|numeric| + 1e-8).
    """
    base = x.data.copy()
    probe = Tensor(base, requires_grad=True)
    with fresh_tape() as tape:
        out = f(probe)
        if out.data.size != 1:
            raise ContractError("check_gradient needs a scalar-valued function")
        if tape.nodes:
            pairs = _flow_gradients(tape, out)
            auto = next((g for t, g in pairs if t is probe), np.zeros_like(base))
        else:
            auto = np.zeros_like(base)
    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.size):
            bumped = base.copy()
            bumped.flat[i] = base.flat[i] + h
            hi = f(Tensor(bumped)).data.item()
            bumped.flat[i] = base.flat[i] - h
            lo = f(Tensor(bumped)).data.item()
            flat[i] = (hi - lo) / (2.0 * h)
    rel = np.abs(auto - numeric) / (np.abs(numeric) + 1e-8)
    return float(np.max(rel))
