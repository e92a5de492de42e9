"""Dense tensors with define-by-run reverse-mode differentiation, plus Adam.

Every downstream loss is a graph over :class:`Tensor`.  The tape is rebuilt
on each forward pass; calling :meth:`Tensor.backward` consumes it.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

# per-thread, so concurrent frozen-model evaluation cannot clobber a trainer's mode
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_mode", True)


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition on an argument value was violated."""


class StateError(RuntimeError):
    """An operation was requested in an invalid object state."""


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape (frozen-model inference)."""
    prev = _grad_enabled()
    _state.grad_mode = False
    try:
        yield
    finally:
        _state.grad_mode = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional array of float64 values that can sit on the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._consumed = False
        out.name = None
        live = tuple(p for p in parents if p.requires_grad)
        if _grad_enabled() and live:
            out.requires_grad = True
            out._parents = live
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

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

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # -- arithmetic --------------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return Tensor._result(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.shape))

        return Tensor._result(a.data - b.data, (a, b), bw)

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._result(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._result(-a.data, (a,), lambda g: a._accum(-g))

    def __pow__(self, p: float) -> "Tensor":
        a = self
        p = float(p)
        return Tensor._result(a.data**p, (a,), lambda g: a._accum(g * p * a.data ** (p - 1.0)))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0

        return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: a._accum(g * mask))

    def leaky_relu(self, slope: float = 0.01) -> "Tensor":
        a = self
        scale = np.where(a.data > 0, 1.0, slope)
        return Tensor._result(a.data * scale, (a,), lambda g: a._accum(g * scale))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        src = a.shape
        return Tensor._result(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(src)))

    def sum(self) -> "Tensor":
        a = self
        return Tensor._result(np.array(a.data.sum()), (a,), lambda g: a._accum(np.broadcast_to(g, a.shape)))

    def mean(self, axis: int) -> "Tensor":
        a = self
        if a.data.ndim == 0:
            raise DimensionError("mean over an axis of a scalar")
        ax = axis % a.data.ndim
        n = a.shape[ax]
        if n == 0:
            raise DimensionError(f"mean over empty axis {axis} of shape {a.shape}")

        def bw(g):
            a._accum(np.broadcast_to(np.expand_dims(g, ax) / n, a.shape))

        return Tensor._result(a.data.mean(axis=ax), (a,), bw)

    def __getitem__(self, idx) -> "Tensor":
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._result(a.data[idx], (a,), bw)

    # -- backward ------------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every differentiable ancestor of this scalar."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise StateError("backward already ran on this graph; rebuild it before calling again")
        if not self.requires_grad:
            self._consumed = True
            return
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
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self._consumed = True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# -- named operations --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), bw)


def gap_temporal(x: Tensor) -> Tensor:
    """Average over the clip axis: ``(..., K, d) -> (..., d)``."""
    if x.data.ndim < 2:
        raise DimensionError(f"gap_temporal expects (..., K, d), got {x.shape}")
    if x.shape[-2] == 0:
        raise DimensionError("gap_temporal over zero clips")
    return x.mean(axis=-2)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ndim = parts[0].data.ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.data.ndim != ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * ndim
                sl[ax] = slice(lo, hi)
                p._accum(g[tuple(sl)])

    return Tensor._result(np.concatenate([p.data for p in parts], axis=ax), parts, bw)


def concat_vec(a: Tensor, b: Tensor) -> Tensor:
    """``[a; b]`` along the last axis; both operands must have equal width."""
    if a.data.ndim < 1 or a.shape != b.shape:
        raise DimensionError(f"concat_vec: operands must match, got {a.shape} and {b.shape}")
    return concat([a, b], axis=-1)


def stack(parts: Sequence[Tensor]) -> Tensor:
    return concat([as_tensor(p).reshape((1,) + as_tensor(p).shape) for p in parts], axis=0)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error ``(1/B) sum_i (pred_i - target_i)^2`` as a scalar."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: pred {pred.shape} vs target {target.shape}")
    n = pred.size
    if n == 0:
        raise DimensionError("mse over an empty batch")
    diff = pred.data - target.data

    def bw(g):
        scale = 2.0 * g / n
        if pred.requires_grad:
            pred._accum(scale * diff)
        if target.requires_grad:
            target._accum(-scale * diff)

    return Tensor._result(np.array(np.mean(diff * diff)), (pred, target), bw)


def detach(x: Tensor) -> Tensor:
    """Same values, cut from the tape."""
    out = Tensor.__new__(Tensor)
    out.data = x.data.copy()
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._backward = None
    out._consumed = False
    out.name = None
    return out


def backward(root: Tensor) -> None:
    root.backward()


# -- optimizer -----------------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls(
            [np.zeros_like(p.data) for p in params],
            [np.zeros_like(p.data) for p in params],
            **kw,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float | Sequence[float],
) -> None:
    """One bias-corrected Adam update, in place.

    ``lr`` may be a single rate or one rate per parameter.  Missing grads
    (``None``) count as zero.
    """
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError("adam_step: params, grads and moments differ in count")
    rates = [float(lr)] * len(params) if np.isscalar(lr) else [float(r) for r in lr]
    if len(rates) != len(params):
        raise DimensionError("adam_step: one learning rate per parameter required")
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is not None and g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {p.shape}")
        if m.shape != p.shape or v.shape != p.shape:
            raise DimensionError(f"adam_step: moment shape mismatch for param {p.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v, rate in zip(params, grads, state.first_moment, state.second_moment, rates):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Adam over named parameter groups, each with its own learning rate."""

    def __init__(self, groups: dict[str, tuple[list[Tensor], float]], beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = groups
        self.params: list[Tensor] = [p for ps, _ in groups.values() for p in ps]
        self.rates: list[float] = [lr for ps, lr in groups.values() for _ in ps]
        self.state = AdamState.zeros_like(self.params, beta1=beta1, beta2=beta2, epsilon=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.rates)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
