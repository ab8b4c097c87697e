"""Dense float64 tensors with reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When gradient tracking is enabled and
any operand requires a gradient, the result remembers its parents and a
closure that maps the upstream gradient to one gradient per parent.
:meth:`Tensor.backward` walks that graph in reverse topological order and
accumulates into the ``grad`` buffers of leaf tensors.

Kernels refuse to produce NaN/Inf: a non-finite result raises
:class:`~plgasoc.errors.NonFiniteError` naming the op.
"""
from __future__ import annotations

import collections
import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateRowError,
    DimensionError,
    DomainError,
    NonFiniteError,
)

_GRAD_ENABLED = True
OP_COUNTS: collections.Counter = collections.Counter()


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def count_ops():
    """Yield a Counter that, on exit, holds the kernels executed inside the block."""
    before = OP_COUNTS.copy()
    counts: collections.Counter = collections.Counter()
    try:
        yield counts
    finally:
        counts.update(OP_COUNTS - before)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor constructed from non-finite data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
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
    def mT(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- reverse mode --------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient.

        The traversed graph is released afterwards so the next step starts
        from a clean slate.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    OP_COUNTS[op] += 1
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.data, b.data, "div")
    if np.any(b.data == 0):
        raise DomainError("div: zero divisor")
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: nonpositive entry")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power_scalar(a, p: float) -> Tensor:
    """``a ** p`` for a constant exponent; non-integer ``p`` needs ``a > 0``."""
    a = as_tensor(a)
    if float(p) != int(p) and np.any(a.data <= 0):
        raise DomainError("power_scalar: nonpositive base with fractional exponent")
    out = a.data**p
    return _result(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "power_scalar")


def elementwise_power(base, exponent) -> Tensor:
    """Entrywise ``base ** exponent`` as ``exp(exponent * ln(base))``.

    Both operands are differentiable; ``base`` must be strictly positive.
    """
    base, exponent = as_tensor(base), as_tensor(exponent)
    _broadcast_check(base.data, exponent.data, "elementwise_power")
    if np.any(base.data <= 0):
        raise DomainError("elementwise_power: base must be strictly positive")
    ln_b = np.log(base.data)
    with np.errstate(over="ignore"):
        out = np.exp(exponent.data * ln_b)

    def backward(g):
        return (
            _unbroadcast(g * exponent.data * out / base.data, base.shape),
            _unbroadcast(g * out * ln_b, exponent.shape),
        )

    return _result(out, (base, exponent), backward, "elementwise_power")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a) -> Tensor:
    """Swish gate ``x * sigmoid(x)``."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _result(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), "silu")


def iswiglu(a) -> Tensor:
    """Non-negative gated activation ``x**2 * sigmoid(x)``."""
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    out = x * x * s

    def backward(g):
        return (g * (2.0 * x * s + x * x * s * (1.0 - s)),)

    return _result(out, (a,), backward, "iswiglu")


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _result(
        np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2)),
        (a,),
        lambda g: (np.swapaxes(g, ax1, ax2),),
        "swapaxes",
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = math.prod(a.shape[ax] for ax in axes)
    return tsum(a, axis, keepdims) * (1.0 / n)


def cumsum(a, axis: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _result(np.cumsum(a.data, axis=axis), (a,), backward, "cumsum")


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[idx], dtype=np.float64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(out, (a,), backward, "index")


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-D ``table`` by integer ``ids`` of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _result(out, (table,), backward, "take_rows")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, ts, backward, "concat")


# ---------------------------------------------------------------------------
# attention and loss kernels


def softmax_masked(logits, mask=None) -> Tensor:
    """Row softmax over the last axis with masked positions forced to zero.

    ``mask`` is a boolean array broadcastable to ``logits``; True keeps the
    entry. Rows with no kept entry raise :class:`DegenerateRowError`.
    """
    logits = as_tensor(logits)
    x = logits.data
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        try:
            keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        except ValueError as exc:
            raise DimensionError(f"mask {np.shape(mask)} vs logits {x.shape}") from exc
    if not keep.any(axis=-1).all():
        raise DegenerateRowError("softmax row with every position masked")
    shifted = np.where(keep, x, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (logits,), backward, "softmax_masked")


def softmax_np(x: np.ndarray) -> np.ndarray:
    """Plain last-axis softmax on an ndarray (no graph)."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted mean next-token cross-entropy.

    ``logits`` has shape ``(..., vocab)``, ``targets`` the leading shape.
    ``weights`` (same shape as ``targets``) zero out padding positions.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {targets.shape} vs logits {logits.shape}")
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ContractError("cross_entropy: no weighted positions")
    x = logits.data
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    nll = lse - picked
    loss = np.asarray((nll * w).sum() / total)

    def backward(g):
        p = np.exp(z - lse[..., None])
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], -1) - 1.0, -1)
        return (p * (w / total)[..., None] * g,)

    return _result(loss, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# random initialisation


class Rng:
    """Seeded random source (PCG64) with reproducible child streams."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, index: int) -> "Rng":
        """Independent stream for item ``index``, seeded as ``seed XOR index``."""
        return Rng(self.seed ^ int(index))

    def uniform(self, low, high, shape) -> np.ndarray:
        return self.gen.uniform(low, high, size=shape)

    def random(self) -> float:
        return float(self.gen.random())

    def normal(self, shape, scale=1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=shape)

    def integers(self, low, high, shape=None):
        return self.gen.integers(low, high, size=shape)

    @property
    def state(self):
        return self.gen.bit_generator.state


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_init(rng: Rng, fan_in: int, fan_out: int, lead: tuple[int, ...] = ()) -> Tensor:
    """Glorot-uniform weights of shape ``lead + (fan_in, fan_out)``."""
    if fan_in <= 0 or fan_out <= 0:
        raise ContractError("glorot_init: fans must be positive")
    bound = glorot_bound(fan_in, fan_out)
    return Tensor(rng.uniform(-bound, bound, tuple(lead) + (fan_in, fan_out)), requires_grad=True)


def zeros_init(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_init(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# finite-difference oracle


def relative_errors(g: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Elementwise ``|g - g_hat| / max(1, |g|, |g_hat|)``."""
    return np.abs(g - g_hat) / np.maximum(1.0, np.maximum(np.abs(g), np.abs(g_hat)))


def numerical_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``t.data``."""
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            out.reshape(-1)[i] = (up - down) / (2.0 * h)
    return out


def check_gradients(fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-4) -> dict[str, float]:
    """Max relative error of reverse-mode vs central-difference gradient per tensor."""
    for p in params.values():
        p.zero_grad()
    fn().backward()
    report = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_gradient(fn, p, h)
        report[name] = float(relative_errors(analytic, numeric).max())
    return report
