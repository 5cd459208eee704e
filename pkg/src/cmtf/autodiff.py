"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The op set is deliberately closed: matrix multiply, (broadcast) add,
elementwise multiply, ReLU, sigmoid, row softmax, layer norm, concat,
basic slicing, mean, sum, binary cross-entropy and mean squared error.
That is everything an encoder-style attention stack needs, and a closed
set keeps the backward pass exhaustively testable against finite
differences.

Tensors are immutable once created; every op allocates a fresh node that
remembers its parents and how to push gradients back to them.  A graph is
therefore implicit in the parent links, and ``backward`` walks it in
reverse topological order.  All values are checked to be finite after
every op: NaN or Inf anywhere is treated as an error state, not a value.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray


def _as_f64(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_finite(arr: Array, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: produced non-finite values")


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[Array], None] | None = None,
        name: str | None = None,
    ):
        self.data = _as_f64(data)
        _check_finite(self.data, name or "tensor")
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def backward(self) -> None:
        backward(self)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product with numpy-style broadcasting of leading axes.

    ``transpose_b`` multiplies against the transpose of ``b``'s trailing
    two axes, which is how attention scores are formed without a separate
    transpose node.
    """
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}"
        )
    b_eff_cols = b.data.shape[-2] if transpose_b else b.data.shape[-1]
    b_inner = b.data.shape[-1] if transpose_b else b.data.shape[-2]
    if a.data.shape[-1] != b_inner:
        raise DimensionError(
            f"matmul: inner dimensions disagree for shapes {a.shape} and "
            f"{b.shape}{' (transposed)' if transpose_b else ''}"
        )
    rhs = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    out_data = a.data @ rhs
    _check_finite(out_data, "matmul")
    out = Tensor(out_data, _parents=(a, b))

    def _back(g: Array) -> None:
        if a.requires_grad or a._parents:
            ga = g @ (b.data if transpose_b else np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad or b._parents:
            if transpose_b:
                gb = np.swapaxes(g, -1, -2) @ a.data
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    out._backward = _back
    return out


def add(a: Tensor, b) -> Tensor:
    """Elementwise addition with broadcasting (covers bias adds)."""
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    _check_finite(out_data, "add")
    out = Tensor(out_data, _parents=(a, b))

    def _back(g: Array) -> None:
        if a.requires_grad or a._parents:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward = _back
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise multiplication with broadcasting; scalars allowed."""
    a, b = _wrap(a), _wrap(b)
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    _check_finite(out_data, "mul")
    out = Tensor(out_data, _parents=(a, b))

    def _back(g: Array) -> None:
        if a.requires_grad or a._parents:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = _back
    return out


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,))

    def _back(g: Array) -> None:
        _accumulate(x, g * (x.data > 0.0))

    out._backward = _back
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    out_data = sigmoid_array(x.data)
    out = Tensor(out_data, _parents=(x,))

    def _back(g: Array) -> None:
        _accumulate(x, g * out_data * (1.0 - out_data))

    out._backward = _back
    return out


def sigmoid_array(z: Array) -> Array:
    """Numerically stable logistic function on a raw array."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilised by max subtraction."""
    x = _wrap(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(out_data, _parents=(x,))

    def _back(g: Array) -> None:
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(x, out_data * (g - inner))

    out._backward = _back
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm: last dimension must be non-empty")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data
    _check_finite(out_data, "layer_norm")
    out = Tensor(out_data, _parents=(x, gain, bias))

    def _back(g: Array) -> None:
        if gain.requires_grad or gain._parents:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad or bias._parents:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad or x._parents:
            gx = g * gain.data
            mean_gx = gx.mean(axis=-1, keepdims=True)
            mean_gx_xhat = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - mean_gx - xhat * mean_gx_xhat))

    out._backward = _back
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    if not parts:
        raise DimensionError("concat: need at least one tensor")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    out = Tensor(out_data, _parents=tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _back(g: Array) -> None:
        moved = np.moveaxis(g, axis, 0)
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad or p._parents:
                _accumulate(p, np.moveaxis(moved[lo:hi], 0, axis))

    out._backward = _back
    return out


def take(x: Tensor, index) -> Tensor:
    """Basic slicing with gradient scatter back into the source."""
    x = _wrap(x)
    out_data = x.data[index]
    out = Tensor(np.array(out_data, dtype=np.float64), _parents=(x,))

    def _back(g: Array) -> None:
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        _accumulate(x, gx)

    out._backward = _back
    return out


def mean(x: Tensor) -> Tensor:
    x = _wrap(x)
    n = x.data.size
    out = Tensor(x.data.mean(), _parents=(x,))

    def _back(g: Array) -> None:
        _accumulate(x, np.full_like(x.data, float(g) / n))

    out._backward = _back
    return out


def tensor_sum(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = Tensor(x.data.sum(), _parents=(x,))

    def _back(g: Array) -> None:
        _accumulate(x, np.full_like(x.data, float(g)))

    out._backward = _back
    return out


def binary_cross_entropy_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean BCE between ``sigmoid(logits)`` and binary targets.

    Uses the log-sum-exp form ``max(z,0) - z*t + log1p(exp(-|z|))`` so that
    untuned logits cannot overflow.  Gradients flow to the logits only.
    """
    logits, targets = _wrap(logits), _wrap(targets)
    if logits.data.shape != targets.data.shape:
        raise DimensionError(
            f"bce: logits shape {logits.shape} != targets shape {targets.shape}"
        )
    z, t = logits.data, targets.data
    per_elem = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(per_elem.mean(), _parents=(logits, targets))
    n = z.size

    def _back(g: Array) -> None:
        if logits.requires_grad or logits._parents:
            _accumulate(logits, float(g) * (sigmoid_array(z) - t) / n)

    out._backward = _back
    return out


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _wrap(pred), _wrap(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"mse: prediction shape {pred.shape} != target shape {target.shape}"
        )
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff), _parents=(pred, target))
    n = diff.size

    def _back(g: Array) -> None:
        scaled = float(g) * 2.0 * diff / n
        if pred.requires_grad or pred._parents:
            _accumulate(pred, scaled)
        if target.requires_grad or target._parents:
            _accumulate(target, -scaled)

    out._backward = _back
    return out


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of every node reachable from root."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor that wants one.

    The loss must be scalar; gradients of reachable leaves end up with the
    same shape as their data.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents and node is not loss:
            node.grad = None  # free intermediate grads; leaves keep theirs


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> Array:
    """Xavier/Glorot uniform initialisation for a weight matrix."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)
