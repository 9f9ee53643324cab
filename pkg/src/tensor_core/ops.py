"""
Differentiable op suite.

add, mul, matmul, transpose, reshape, slice/concat, softmax, layer_norm,
gelu, embedding, cross_entropy, mse, scale and sum. Broadcasting is limited
to adding an operand whose shape is a trailing suffix of the other (bias and
positional tables); everything else requires exact shapes.

GELU is the tanh approximation:
    0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x**3)))
"""

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.tensor_core.tensor import ShapeError, Tensor

ArrayLike = Union[Tensor, np.ndarray, float, int]

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _reduce_to_suffix(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < b.ndim:
        a, b = b, a
    if a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError("add", "second operand must match the trailing axes", a.shape, b.shape)

    def _backward(g):
        return g, _reduce_to_suffix(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), "add", _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", "elementwise operands must have equal shapes", a.shape, b.shape)

    def _backward(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return Tensor.from_op(a.data * b.data, (a, b), "mul", _backward)


def scale(a: ArrayLike, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor.from_op(a.data * c, (a,), "scale", lambda g: (g * c,))


def sum(a: ArrayLike) -> Tensor:  # noqa: A001 - mirrors the numpy name
    a = as_tensor(a)
    return Tensor.from_op(
        np.array(a.data.sum()), (a,), "sum", lambda g: (np.full_like(a.data, float(g)),)
    )


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Matrix product over the last two axes.

    b is either 2-D (shared across a's leading axes) or has exactly a's
    leading axes (batched product).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", "operands must be at least 2-D", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", "inner dimensions differ", a.shape, b.shape)
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", "batched operands need equal leading axes", a.shape, b.shape)

    out = np.matmul(a.data, b.data)

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = a2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return Tensor.from_op(out, (a, b), "matmul", _backward)


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", f"invalid permutation {axes}", a.shape)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(
        np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inverse),)
    )


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape to {shape}", a.shape) from None
    return Tensor.from_op(out, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def slice(a: ArrayLike, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeError("slice", f"range [{start}, {stop}) outside axis {axis}", a.shape)
    index = [np.s_[:]] * a.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)

    def _backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return Tensor.from_op(a.data[index].copy(), (a,), "slice", _backward)


def concat(tensors: Sequence[ArrayLike], axis: int) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat", "needs at least one operand")
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts[1:]:
        other = p.shape[:axis] + p.shape[axis + 1:]
        first = parts[0].shape[:axis] + parts[0].shape[axis + 1:]
        if p.ndim != ndim or other != first:
            raise ShapeError("concat", f"operands disagree off axis {axis}", *[q.shape for q in parts])
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    out = np.concatenate([p.data for p in parts], axis=axis)
    return Tensor.from_op(out, parts, "concat", _backward)


def softmax(a: ArrayLike) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise ShapeError("softmax", "last axis is empty", a.shape)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(y, (a,), "softmax", _backward)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) * gain + bias over the last axis."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError("layer_norm", "gain and bias must match the last axis", x.shape, gain.shape, bias.shape)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def _backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        ggain = _reduce_to_suffix(g * xhat, gain.shape) if gain.requires_grad else None
        gbias = _reduce_to_suffix(g, bias.shape) if bias.requires_grad else None
        return gx, ggain, gbias

    return Tensor.from_op(out, (x, gain, bias), "layer_norm", _backward, {"xhat": xhat})


def gelu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    inner = GELU_C * (x + GELU_A * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _backward(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner),)

    return Tensor.from_op(out, (a,), "gelu", _backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding", "table must be 2-D", table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", f"ids outside [0, {table.shape[0]})", table.shape, ids.shape)

    def _backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return Tensor.from_op(table.data[ids], (table,), "embedding", _backward)


def cross_entropy(logits: ArrayLike, targets, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean softmax cross-entropy over the rows selected by mask.

    logits is [N, V] (or [V] with a scalar target); targets are integer ids.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    squeeze = logits.ndim == 1
    z = logits.data.reshape(1, -1) if squeeze else logits.data
    t = targets.reshape(-1)
    if z.ndim != 2 or t.shape[0] != z.shape[0]:
        raise ShapeError("cross_entropy", "expected logits [N, V] and N targets", logits.shape, targets.shape)
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise ShapeError("cross_entropy", "target id outside vocabulary", logits.shape, targets.shape)
    w = np.ones(z.shape[0]) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    if w.shape[0] != z.shape[0]:
        raise ShapeError("cross_entropy", "mask must have one entry per row", logits.shape, w.shape)
    total = w.sum()
    if total <= 0:
        raise ShapeError("cross_entropy", "mask selects no rows", logits.shape, w.shape)

    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -(w * log_probs[rows, t]).sum() / total

    def _backward(g):
        probs = np.exp(log_probs)
        probs[rows, t] -= 1.0
        grad = probs * (w / total)[:, None] * float(g)
        return (grad.reshape(logits.shape),)

    return Tensor.from_op(np.array(loss), (logits,), "cross_entropy", _backward)


def mse(pred: ArrayLike, target: ArrayLike) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("mse", "operands must have equal shapes", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size

    def _backward(g):
        gp = 2.0 * diff / n * float(g)
        return (gp if pred.requires_grad else None, -gp if target.requires_grad else None)

    return Tensor.from_op(np.array((diff ** 2).mean()), (pred, target), "mse", _backward)
