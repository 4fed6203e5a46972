"""Reverse-mode automatic differentiation over dense float64 arrays.

Each operation records a node whose backward rule is written in terms of the
same differentiable operations, so gradients can themselves be differentiated
(``grad(..., create_graph=True)``).  That is what the gradient penalty needs.

Node ids come from a process-wide monotone counter: a node's inputs always
carry smaller ids, and a backward pass visits nodes in decreasing id order.
"""
from __future__ import annotations

import contextlib
import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "DimensionError", "NonFiniteError", "tensor", "constant",
    "no_grad", "is_grad_enabled", "grad",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "transpose",
    "square", "sqrt", "leaky_relu", "l2_norm_rows", "clamp_min",
    "sum_all", "mean", "sum_rows", "sum_cols", "add_rowvec", "mul_rows",
    "tile_rows", "tile_cols", "concat_cols", "cols",
]

_ids = itertools.count()
_state = threading.local()

# backward-only floor on row norms; see l2_norm_rows
NORM_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager: operations inside record no graph nodes."""
    return _grad_mode(False)


class Tensor:
    __slots__ = ("data", "requires_grad", "id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids) if requires_grad else None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def __repr__(self):
        tag = f", id={self.id}, op={self.op}" if self.id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, op: str) -> None:
    # fast path: a sum over finite values is finite unless it overflows
    if data.size and not math.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.id = next(_ids)
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out.id = None
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        c = float(b)
        return _node(a.data + c, (a,), lambda g: (g,), "add_scalar")
    a = _as_tensor(a)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    a = _as_tensor(a)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, neg(g)), "sub")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (neg(g),), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (scale(g, c),), "scale")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(_as_tensor(a), b)
    a = _as_tensor(a)
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (mul(g, b), mul(g, a)), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out_data = a.data / b.data

    def backward(g):
        ga = div(g, b)
        return ga, neg(div(mul(ga, a), b))

    return _node(out_data, (a, b), backward, "div")


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (mul(g, scale(a, 2.0)),), "square")


def sqrt(a: Tensor) -> Tensor:
    if (a.data < 0).any():
        raise NonFiniteError("sqrt of negative value")
    # backward rebuilds sqrt(a) rather than closing over the output node,
    # which would make a reference cycle holding the array
    return _node(np.sqrt(a.data), (a,), lambda g: (div(g, scale(sqrt(a), 2.0)),), "sqrt")


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """max(x, slope*x); at exactly 0 the derivative is taken as ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    factor = np.where(x.data > 0, 1.0, slope)
    mask = Tensor(factor)
    return _node(x.data * factor, (x,), lambda g: (mul(g, mask),), "leaky_relu")


def clamp_min(x: Tensor, lo: float) -> Tensor:
    keep = x.data > lo
    mask = Tensor(keep.astype(np.float64))
    return _node(np.where(keep, x.data, lo), (x,), lambda g: (mul(g, mask),), "clamp_min")


# ----------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (_fill(g, shape),)

    return _node(np.asarray(a.data.sum()), (a,), backward, "sum")


def _fill(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Broadcast scalar ``g`` to ``shape`` (differentiable)."""
    ones = np.ones(shape)
    return _node(ones * g.data, (g,), lambda h: (sum_all(h),), "fill")


def mean(a: Tensor) -> Tensor:
    if a.size == 0:
        raise DimensionError("mean of empty tensor")
    return scale(sum_all(a), 1.0 / a.size)


def sum_rows(a: Tensor) -> Tensor:
    """[m, n] -> [n]: sum over the batch axis."""
    _need_2d(a, "sum_rows")
    m = a.shape[0]
    return _node(a.data.sum(axis=0), (a,), lambda g: (tile_rows(g, m),), "sum_rows")


def sum_cols(a: Tensor) -> Tensor:
    """[m, n] -> [m]: sum within each row."""
    _need_2d(a, "sum_cols")
    n = a.shape[1]
    return _node(a.data.sum(axis=1), (a,), lambda g: (tile_cols(g, n),), "sum_cols")


def tile_rows(v: Tensor, m: int) -> Tensor:
    """[n] -> [m, n] by repeating ``v`` as every row."""
    return _node(np.broadcast_to(v.data, (m, v.shape[0])).copy(), (v,),
                 lambda g: (sum_rows(g),), "tile_rows")


def tile_cols(v: Tensor, n: int) -> Tensor:
    """[m] -> [m, n] by repeating ``v`` as every column."""
    return _node(np.repeat(v.data[:, None], n, axis=1), (v,),
                 lambda g: (sum_cols(g),), "tile_cols")


def _need_2d(a: Tensor, op: str) -> None:
    if a.data.ndim != 2:
        raise DimensionError(f"{op}: expected a matrix, got shape {a.shape}")


# ------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = matmul(g, transpose(b)) if _wanted(a) else None
        gb = matmul(transpose(a), g) if _wanted(b) else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    _need_2d(a, "transpose")
    return _node(a.data.T, (a,), lambda g: (transpose(g),), "transpose")


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """x[m, n] + b[n] added to every row (the affine bias)."""
    _need_2d(x, "add_rowvec")
    if b.shape != (x.shape[1],):
        raise DimensionError(f"add_rowvec: bias {b.shape} does not fit {x.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, sum_rows(g) if _wanted(b) else None), "add_rowvec")


def mul_rows(x: Tensor, s: Tensor) -> Tensor:
    """x[m, n] with row i scaled by s[i]."""
    _need_2d(x, "mul_rows")
    if s.shape != (x.shape[0],):
        raise DimensionError(f"mul_rows: scale {s.shape} does not fit {x.shape}")

    def backward(g):
        return mul_rows(g, s), sum_cols(mul(g, x))

    return _node(x.data * s.data[:, None], (x, s), backward, "mul_rows")


def l2_norm_rows(x: Tensor) -> Tensor:
    """Euclidean norm of each row, [m, n] -> [m].

    The backward pass divides by ``max(norm, 1e-12)`` so a zero row yields a
    zero gradient instead of NaN; forward values are untouched.
    """
    _need_2d(x, "l2_norm_rows")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"l2_norm_rows: empty input {x.shape}")
    out_data = np.sqrt(np.einsum("ij,ij->i", x.data, x.data))

    def backward(g):
        return (mul_rows(x, div(g, clamp_min(l2_norm_rows(x), NORM_FLOOR))),)

    return _node(out_data, (x,), backward, "l2_norm_rows")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    for p in parts:
        _need_2d(p, "concat_cols")
    m = parts[0].shape[0]
    if any(p.shape[0] != m for p in parts):
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(cols(g, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.concatenate([p.data for p in parts], axis=1), parts, backward, "concat_cols")


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice x[:, start:stop]."""
    _need_2d(x, "cols")
    m, n = x.shape

    def backward(g):
        pieces = []
        if start > 0:
            pieces.append(Tensor(np.zeros((m, start))))
        pieces.append(g)
        if stop < n:
            pieces.append(Tensor(np.zeros((m, n - stop))))
        return (concat_cols(pieces) if len(pieces) > 1 else g,)

    return _node(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward, "cols")


# ------------------------------------------------------------------- backward

# ids of the nodes the running backward sweep must reach; matmul skips the rest
_sweep = threading.local()


def _wanted(t: Tensor) -> bool:
    needed = getattr(_sweep, "needed", None)
    return t.id is not None and (needed is None or t.id in needed)


def _collect(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id is None or t.id in seen:
            continue
        seen[t.id] = t
        stack.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t.id)


def grad(loss: Tensor, wrt: Iterable[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    A tensor the loss does not depend on gets a zero gradient of its own
    shape.  With ``create_graph`` the returned gradients are graph nodes and
    can be differentiated again.
    """
    wrt = list(wrt)
    if loss.size != 1:
        raise DimensionError(f"grad: loss must be scalar, got shape {loss.shape}")
    targets = {t.id for t in wrt if t.id is not None}
    if loss.id is None or not targets:
        return [Tensor(np.zeros(t.shape)) for t in wrt]

    nodes = _collect(loss)
    # restrict the sweep to nodes that lie on a path into some target
    needed: set[int] = set()
    for t in nodes:
        if t.id in targets or any(p.id in needed for p in t._parents):
            needed.add(t.id)

    grads: dict[int, Tensor] = {loss.id: Tensor(np.ones(loss.shape))}
    _sweep.needed = needed
    try:
        _backward_sweep(nodes, needed, grads, create_graph)
    finally:
        _sweep.needed = None
    out = []
    for t in wrt:
        g = grads.get(t.id) if t.id is not None else None
        out.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return out


def _backward_sweep(nodes, needed, grads, create_graph) -> None:
    with _grad_mode(create_graph):
        for t in reversed(nodes):
            g = grads.get(t.id)
            if g is None or t._backward is None or t.id not in needed:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None or p.id is None or p.id not in needed:
                    continue
                prev = grads.get(p.id)
                grads[p.id] = pg if prev is None else add(prev, pg)
