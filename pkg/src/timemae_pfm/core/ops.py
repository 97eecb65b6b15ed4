"""Differentiable primitives.

Every function takes and returns :class:`Tensor`. When a tape is active and
at least one input is watched, the op registers its vector-Jacobian product.
Outputs are checked for NaN/Inf on every call.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from .tensor import NumericError, ShapeError, Tensor, active_tape, as_tensor

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _emit(op: str, data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(tape.watches(t) for t in inputs):
        tape.record(op, out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes; both operands need ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g):
        return (_unbroadcast(g @ _swap(b.data), a.shape), _unbroadcast(_swap(a.data) @ g, b.shape))

    return _emit("matmul", a.data @ b.data, (a, b), vjp)


def affine(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` with weight ``(n_in, n_out)`` and bias ``(n_out,)``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or bias.shape != (weight.shape[1],) or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"affine: x {x.shape}, weight {weight.shape}, bias {bias.shape} are incompatible")
    out = x.data @ weight.data + bias.data

    def vjp(g):
        lead = g.reshape(-1, g.shape[-1])
        xs = x.data.reshape(-1, x.shape[-1])
        return (g @ weight.data.T, xs.T @ lead, lead.sum(axis=0))

    return _emit("affine", out, (x, weight, bias), vjp)


def conv1d(x, kernel, bias, stride: int | None = None) -> Tensor:
    """One-dimensional convolution along the time axis.

    ``x`` has shape ``(..., T, m)`` and ``kernel`` ``(d, m, width)``; the
    output is ``(..., n_out, d)`` with ``n_out = (T - width) // stride + 1``.
    Stride defaults to the kernel width (non-overlapping windows).
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if kernel.ndim != 3 or x.ndim < 2:
        raise ShapeError(f"conv1d: x {x.shape} and kernel {kernel.shape} are incompatible")
    d, m, width = kernel.shape
    if x.shape[-1] != m or bias.shape != (d,):
        raise ShapeError(f"conv1d: x {x.shape}, kernel {kernel.shape}, bias {bias.shape} are incompatible")
    stride = width if stride is None else int(stride)
    T = x.shape[-2]
    if T < width or stride < 1:
        raise ShapeError(f"conv1d: series length {T} shorter than kernel width {width}")
    n_out = (T - width) // stride + 1
    span = stride * (n_out - 1) + 1
    out = np.zeros(x.shape[:-2] + (n_out, d))
    for j in range(width):
        out += x.data[..., j:j + span:stride, :] @ kernel.data[:, :, j].T
    out += bias.data

    def vjp(g):
        gx = np.zeros_like(x.data)
        gk = np.empty_like(kernel.data)
        g2 = g.reshape(-1, d)
        for j in range(width):
            xj = x.data[..., j:j + span:stride, :].reshape(-1, m)
            gk[:, :, j] = g2.T @ xj
            gx[..., j:j + span:stride, :] += g @ kernel.data[:, :, j]
        return gx, gk, g2.sum(axis=0)

    return _emit("conv1d", out, (x, kernel, bias), vjp)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", y, (x,), vjp)


def layer_norm(x, eps: float = 1e-9) -> Tensor:
    """Normalise the last axis to zero mean and unit (population) variance.

    No learned scale or shift; compose with :func:`mul`/:func:`add` for that.
    """
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def vjp(g):
        gs = g.sum(axis=-1, keepdims=True)
        gx = (g * xhat).sum(axis=-1, keepdims=True)
        return (inv / n * (n * g - gs - xhat * gx),)

    return _emit("layer_norm", xhat, (x,), vjp)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return _emit("gelu", x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return _emit("relu", np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _emit("mean", np.asarray(out), (x,), vjp)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", np.asarray(out), (x,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, tensors, vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _emit("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inverse),))


def take(x, index) -> Tensor:
    """Rows of ``x`` along axis 0 at integer ``index`` (any index shape)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < -x.shape[0] or index.max() >= x.shape[0]):
        raise ShapeError(f"take: index out of range for axis of length {x.shape[0]}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("take", x.data[index], (x,), vjp)


def gather_rows(x, index) -> Tensor:
    """Per-batch selection: ``out[b, k] = x[b, index[b, k]]`` for ``x`` of shape ``(B, S, ...)``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows: index {index.shape} does not match batch of {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise ShapeError(f"gather_rows: index out of range for axis of length {x.shape[1]}")
    rows = np.arange(x.shape[0])[:, None]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, index), g)
        return (gx,)

    return _emit("gather_rows", x.data[rows, index], (x,), vjp)


def huber(pred, target, delta: float) -> Tensor:
    """Mean elementwise Huber penalty of ``target - pred``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"huber: pred {pred.shape} and target {target.shape} differ")
    if not delta > 0:
        raise ValueError(f"huber threshold must be positive, got {delta}")
    r = target.data - pred.data
    a = np.abs(r)
    quad = a <= delta
    vals = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    n = r.size

    def vjp(g):
        dr = np.where(quad, r, delta * np.sign(r)) * (g / n)
        return (-dr, dr)

    return _emit("huber", np.asarray(vals.mean()), (pred, target), vjp)


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy from raw logits; ``labels`` are constants in {0, 1}."""
    logits = as_tensor(logits)
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} and labels {y.shape} differ")
    z = logits.data
    # log(1 + exp(-|z|)) form avoids overflow
    vals = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    p = expit(z)
    n = z.size
    return _emit("bce_with_logits", np.asarray(vals.mean()), (logits,),
                 lambda g: ((p - y) * (g / n),))
