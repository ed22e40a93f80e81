"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every value is a matrix. Column vectors stand in for plain vectors, and a
batch of vectors is a matrix whose columns are the samples. The only
implicit broadcast is a column vector added to (or subtracted from) every
column of a matrix, which is what a bias term needs. Everything else must
match shapes exactly.

The graph is built dynamically as operations run and is consumed by
``backward``: intermediate nodes drop their links afterwards, so calling
``backward`` twice on the same graph raises. Leaf gradients accumulate
within one pass (fan-out) and must be cleared with ``zero_grad`` before the
next pass.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar. Python scalars are treated as constants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _shape_error(op: str, a: Tensor, b: Tensor) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# --- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


# --- elementwise ------------------------------------------------------------

def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> int:
    """0: same shape; 1: b is a column broadcast over a; 2: a over b."""
    if a.shape == b.shape:
        return 0
    if b.shape == (a.shape[0], 1):
        return 1
    if a.shape == (b.shape[0], 1):
        return 2
    raise _shape_error(op, a, b)


def _reduce(g: np.ndarray, kind: int, which: int) -> np.ndarray:
    if kind == which:
        return g.sum(axis=1, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b, "add")

    def back(g):
        return (_reduce(g, kind, 2) if a.requires_grad else None,
                _reduce(g, kind, 1) if b.requires_grad else None)

    return _result(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    kind = _broadcast_kind(a, b, "sub")

    def back(g):
        return (_reduce(g, kind, 2) if a.requires_grad else None,
                -_reduce(g, kind, 1) if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        return (g * bd if a.requires_grad else None,
                g * ad if b.requires_grad else None)

    return _result(ad * bd, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + c, (a,), lambda g: (g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _result(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a constant exponent (used for 1/sqrt in layer norm)."""
    ad = a.data
    y = ad ** p
    return _result(y, (a,), lambda g: (g * p * ad ** (p - 1.0),))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "scale_by_constant": scale,
}


def elementwise(op: str, *operands):
    """Dispatch by name; ``elementwise("scale_by_constant", t, 2.0)``."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# --- structural -------------------------------------------------------------

def concat_rows(*parts: Tensor) -> Tensor:
    if not parts:
        raise ContractError("concat_rows needs at least one tensor")
    cols = parts[0].shape[1]
    for p in parts[1:]:
        if p.shape[1] != cols:
            raise _shape_error("concat_rows", parts[0], p)
    edges = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[edges[i]:edges[i + 1]] if p.requires_grad else None
                     for i, p in enumerate(parts))

    return _result(np.vstack([p.data for p in parts]), tuple(parts), back)


def concat_cols(*parts: Tensor) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    for p in parts[1:]:
        if p.shape[0] != rows:
            raise _shape_error("concat_cols", parts[0], p)
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, edges[i]:edges[i + 1]] if p.requires_grad else None
                     for i, p in enumerate(parts))

    return _result(np.hstack([p.data for p in parts]), tuple(parts), back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    rows = a.shape[0]
    if not 0 <= start < stop <= rows:
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")

    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _result(a.data[start:stop].copy(), (a,), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    cols = a.shape[1]
    if not 0 <= start < stop <= cols:
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {a.shape}")

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop].copy(), (a,), back)


def take_cols(a: Tensor, index) -> Tensor:
    """Gather columns by integer index (repeats allowed; gradients scatter-add)."""
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[1])):
        raise ShapeError(f"take_cols index out of range for {a.shape}")

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (slice(None), idx), g)
        return (full,)

    return _result(a.data[:, idx], (a,), back)


# --- reductions -------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _result(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def softmax_rows(a: Tensor, mask=None) -> Tensor:
    """Row-wise softmax. ``mask`` (bool, same shape) marks blocked entries,
    which receive exactly zero weight."""
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax mask shape {mask.shape} != {x.shape}")
        if mask.all(axis=1).any():
            raise ContractError("softmax row fully masked")
        x = np.where(mask, -np.inf, x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), back)


# --- graph traversal --------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
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
        if node._consumed:
            raise ContractError(
                "graph already consumed by a previous backward(); rebuild the forward pass"
            )
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor that does not require grad")
    order = _topological(loss)
    leaves = [n for n in order if n._backward is None]
    for leaf in leaves:
        if leaf.grad is not None:
            raise ContractError(
                f"leaf {leaf!r} still holds a gradient; call zero_grad() before backward()"
            )
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node._parents = ()
        node._backward = None
        node._consumed = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# --- finite-difference checking ---------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f()`` with respect to every entry of ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * h)
    return grad


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                    details: bool = False):
    """Compare backprop gradients of scalar ``f()`` against central differences.

    Returns the maximum relative error over every coordinate of every
    parameter, or ``(max_error, {name_or_index: max_error})`` when
    ``details`` is set.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    zero_grad(params)
    loss = f()
    backward(loss)
    per_param = {}
    worst = 0.0
    for i, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(f, p, h)
        err = float(relative_error(analytic, numeric).max()) if p.data.size else 0.0
        per_param[p.name or i] = err
        worst = max(worst, err)
    zero_grad(params)
    if details:
        return worst, per_param
    return worst
