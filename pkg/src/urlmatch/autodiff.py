"""Reverse-mode differentiation over dense float64 numpy arrays.

Operations executed inside an active :class:`Tape` whose inputs require
gradients are recorded together with a vector-Jacobian product. Outside a
tape the same functions just compute values, which is how inference runs.

    with Tape():
        loss = total_loss(...)
    grads = backward(loss, store)
"""

from __future__ import annotations

import contextvars
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_ACTIVE = contextvars.ContextVar("urlmatch_tape", default=None)


class Tensor:
    __slots__ = ("value", "requires_grad", "_tape")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Records primitive operations in execution order (a topological order)."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], VJP]] = []
        self._token = None

    def __enter__(self) -> Tape:
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop the recording. Tensors and their tape form reference cycles, so
        long loops should clear each tape once its gradients are taken."""
        self.nodes.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(value: np.ndarray, parents: tuple[Tensor, ...], vjp: VJP, op: str) -> Tensor:
    if not np.isfinite(value).all():
        raise NumericError(f"{op} produced a non-finite value")
    tape = _ACTIVE.get()
    if tape is None or not any(p.requires_grad for p in parents):
        return Tensor(value)
    out = Tensor(value, requires_grad=True)
    out._tape = tape
    tape.nodes.append((out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --
# Primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _emit(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _emit(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _emit(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.value, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.value * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit(
        a.value @ b.value,
        (a, b),
        lambda g: (
            g @ b.value.T if a.requires_grad else None,
            a.value.T @ g if b.requires_grad else None,
        ),
        "matmul",
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise DimensionError("transpose expects a matrix")
    return _emit(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _emit(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero wherever clipping is active."""
    a = as_tensor(a)
    inside = (a.value > lo) & (a.value < hi)
    return _emit(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise DimensionError("row_softmax expects a matrix")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit(out, (a,), vjp, "row_softmax")


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows where the floor is active."""
    a = as_tensor(a)
    if floor > 0:
        live = a.value > floor
        safe = np.where(live, a.value, floor)
    else:
        live = np.ones(a.shape, dtype=bool)
        safe = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(safe)
    return _emit(out, (a,), lambda g: (np.where(live, g / safe, 0.0),), "log")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(np.asarray(out), (a,), vjp, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / max(n, 1))


def gather_rows(a, index) -> Tensor:
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise DimensionError("gather_rows: index out of range")

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit(a.value[index], (a,), vjp, "gather_rows")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _emit(out, parts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def dropout(a, mask: np.ndarray, rate: float) -> Tensor:
    """Inverted dropout with a pre-sampled 0/1 ``mask`` (kept entries scaled by ``1/(1-rate)``)."""
    a = as_tensor(a)
    if mask.shape != a.shape:
        raise DimensionError(f"dropout mask {mask.shape} does not fit {a.shape}")
    factor = np.asarray(mask, dtype=np.float64) / (1.0 - rate)
    return _emit(a.value * factor, (a,), lambda g: (g * factor,), "dropout")


def custom(value: np.ndarray, parents: Sequence[Tensor], vjp: VJP, op: str) -> Tensor:
    """Record an operation whose forward value and VJP were computed by the caller."""
    return _emit(np.asarray(value, dtype=np.float64), tuple(parents), vjp, op)


# --
# Gradients


def backward(loss: Tensor, store: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``loss``; returns one gradient per entry of ``store``.

    Entries the loss does not depend on receive zeros. The tape is left
    untouched, so calling this twice gives identical results.
    """
    if loss.value.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    tape = loss._tape
    if tape is not None:
        for out, parents, vjp in reversed(tape.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, gp in zip(parents, vjp(g)):
                if gp is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = grads[key] + gp if key in grads else gp
    return {name: np.array(grads.get(id(t), np.zeros(t.shape)), dtype=np.float64).reshape(t.shape)
            for name, t in store.items()}


def grad_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    store: Mapping[str, Tensor],
    h: float = 1e-5,
    names: Sequence[str] | None = None,
) -> float:
    """Largest ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`` over all coordinates.

    ``f`` must be deterministic. Each coordinate is perturbed in place by
    ``+-h`` and restored afterwards.
    """
    with Tape():
        loss = f(store)
    analytic = backward(loss, store)
    worst = 0.0
    for name in names if names is not None else list(store):
        flat = store[name].value.reshape(-1)
        if not np.shares_memory(flat, store[name].value):
            raise ContractError(f"parameter {name!r} is not contiguous; cannot perturb in place")
        g_ad = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(f(store).value)
            flat[idx] = orig - h
            down = float(f(store).value)
            flat[idx] = orig
            g_fd = (up - down) / (2.0 * h)
            err = abs(g_ad[idx] - g_fd) / max(1.0, abs(g_ad[idx]), abs(g_fd))
            worst = max(worst, err)
    return worst
