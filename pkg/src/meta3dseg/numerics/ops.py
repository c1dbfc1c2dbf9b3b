"""Differentiable operations.

Every op takes and returns :class:`Tensor` objects and records a vector-Jacobian
product on the active graph.  No broadcasting exists beyond the bias term of
``linear`` and ``conv3d``; every other binary op requires identical shapes.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .tensor import NumericsError, Tensor, emit


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise NumericsError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """3D cross-correlation of a ``[C_in, D, H, W]`` volume plus per-channel bias."""
    if x.data.ndim != 4:
        raise NumericsError(f"conv3d: input must be [C, D, H, W], got {x.shape}")
    if kernel.data.ndim != 5:
        raise NumericsError(f"conv3d: kernel must be [C_out, C_in, k, k, k], got {kernel.shape}")
    c_out, c_in, k, k1, k2 = kernel.shape
    if not (k == k1 == k2):
        raise NumericsError(f"conv3d: kernel must be cubic, got {kernel.shape[2:]}")
    if c_in != x.shape[0]:
        raise NumericsError(f"conv3d: kernel expects {c_in} input channels, input has {x.shape[0]}")
    if bias.shape != (c_out,):
        raise NumericsError(f"conv3d: bias must have shape ({c_out},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise NumericsError("conv3d: stride must be >= 1 and padding >= 0")
    for n in x.shape[1:]:
        span = n + 2 * padding - k
        if span < 0 or span % stride:
            raise NumericsError(
                f"conv3d: extent {n} with k={k}, stride={stride}, padding={padding} "
                "does not give an integral output size")

    out, cols = kernels.conv3d_forward(x.data, kernel.data, bias.data, stride, padding)

    def vjp(g: np.ndarray):
        gx = kernels.conv3d_backward_input(g, kernel.data, x.shape, stride, padding) \
            if x.requires_grad else None
        gk = kernels.conv3d_backward_kernel(g, cols, kernel.shape) if kernel.requires_grad else None
        gb = g.reshape(c_out, -1).sum(axis=1) if bias.requires_grad else None
        return gx, gk, gb

    return emit("conv3d", (x, kernel, bias), out, vjp, stride=stride, padding=padding)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for a vector ``x``, or row-wise for a ``[N, n]`` batch."""
    if weight.data.ndim != 2:
        raise NumericsError(f"linear: weight must be 2-D, got {weight.shape}")
    m, n = weight.shape
    if x.data.ndim not in (1, 2) or x.shape[-1] != n:
        raise NumericsError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (m,):
        raise NumericsError(f"linear: bias must have shape ({m},), got {bias.shape}")
    out = x.data @ weight.data.T + bias.data

    def vjp(g: np.ndarray):
        gx = g @ weight.data if x.requires_grad else None
        if weight.requires_grad:
            gw = g.T @ x.data if g.ndim == 2 else np.outer(g, x.data)
        else:
            gw = None
        gb = (g.sum(axis=0) if g.ndim == 2 else g) if bias.requires_grad else None
        return gx, gw, gb

    return emit("linear", (x, weight, bias), out, vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)
    return emit("relu", (x,), out, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clamped so the output never rounds to exactly 0 or 1."""
    dt = x.data.dtype
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    s = np.clip(s, np.finfo(dt).tiny, 1.0 - np.finfo(dt).epsneg).astype(dt)
    return emit("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise NumericsError(f"unknown activation {kind!r}")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return emit("exp", (x,), out, lambda g: (g * out,))


def channel_max(x: Tensor) -> tuple[Tensor, int]:
    """Maximum of a 1-D tensor and its index; ties go to the lowest index."""
    if x.data.ndim != 1 or x.size == 0:
        raise NumericsError(f"channel_max: need a non-empty 1-D tensor, got {x.shape}")
    idx = int(np.argmax(x.data))

    def vjp(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[idx] = g[0]
        return (gx,)

    return emit("channel_max", (x,), x.data[idx:idx + 1].copy(), vjp, index=idx), idx


def channel_max_rows(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """Row-wise :func:`channel_max` over a ``[N, c]`` tensor."""
    if x.data.ndim != 2 or x.shape[1] == 0:
        raise NumericsError(f"channel_max_rows: need [N, c] with c >= 1, got {x.shape}")
    idx = np.argmax(x.data, axis=1)
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def vjp(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return emit("channel_max", (x,), out, vjp), idx


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return emit("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return emit("scale", (x,), x.data * c, lambda g: (g * c,), factor=float(c))


def square(x: Tensor) -> Tensor:
    return emit("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.array([x.data.sum()], dtype=x.data.dtype)
    return emit("sum", (x,), out, lambda g: (np.full_like(x.data, g[0]),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = np.array([x.data.sum() / n], dtype=x.data.dtype)
    return emit("mean", (x,), out, lambda g: (np.full_like(x.data, g[0] / n),))


def mean_rows(x: Tensor) -> Tensor:
    """Average a ``[N, d]`` tensor over its rows."""
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise NumericsError(f"mean_rows: need a non-empty [N, d] tensor, got {x.shape}")
    n = x.shape[0]
    out = x.data.sum(axis=0) / n

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return emit("mean_rows", (x,), out, vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise NumericsError(f"reshape: cannot reshape {x.shape} to {shape}")
    src = x.shape
    return emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),), shape=shape)


def segment(x: Tensor, start: int, stop: int, shape: Sequence[int] | None = None) -> Tensor:
    """Slice ``x[start:stop]`` out of a flat vector, optionally reshaped."""
    if x.data.ndim != 1 or not (0 <= start < stop <= x.size):
        raise NumericsError(f"segment: bad range [{start}, {stop}) for shape {x.shape}")
    piece = x.data[start:stop]
    shape = tuple(shape) if shape is not None else piece.shape
    if int(np.prod(shape)) != piece.size:
        raise NumericsError(f"segment: {piece.size} values cannot take shape {shape}")
    n = x.size

    def vjp(g: np.ndarray):
        gx = np.zeros(n, dtype=g.dtype)
        gx[start:stop] = g.reshape(-1)
        return (gx,)

    return emit("segment", (x,), piece.reshape(shape).copy(), vjp, start=start, stop=stop)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors end to end."""
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise NumericsError("concat: need at least one 1-D tensor")
    bounds = np.cumsum([0] + [p.size for p in parts])
    out = np.concatenate([p.data for p in parts])

    def vjp(g: np.ndarray):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return emit("concat", tuple(parts), out, vjp)


def point_features(embedding: Tensor, coords: Tensor) -> Tensor:
    """Rows ``[embedding, x]`` for every coordinate row ``x`` of a ``[N, 3]`` tensor."""
    if embedding.data.ndim != 1:
        raise NumericsError(f"point_features: embedding must be 1-D, got {embedding.shape}")
    if coords.data.ndim != 2 or coords.shape[1] != 3:
        raise NumericsError(f"point_features: coords must be [N, 3], got {coords.shape}")
    n, m = coords.shape[0], embedding.size
    out = np.empty((n, m + 3), dtype=embedding.data.dtype)
    out[:, :m] = embedding.data
    out[:, m:] = coords.data

    def vjp(g: np.ndarray):
        return g[:, :m].sum(axis=0), g[:, m:]

    return emit("point_features", (embedding, coords), out, vjp)


def point_linear(embedding: Tensor, coords: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``linear(point_features(embedding, coords), weight, bias)`` without materializing the rows.

    The embedding block of ``weight`` is applied once instead of once per point.
    """
    m = embedding.size
    if embedding.data.ndim != 1 or coords.data.ndim != 2 or coords.shape[1] != 3:
        raise NumericsError(f"point_linear: bad embedding {embedding.shape} / coords {coords.shape}")
    if weight.data.ndim != 2 or weight.shape[1] != m + 3 or bias.shape != (weight.shape[0],):
        raise NumericsError(f"point_linear: weight {weight.shape} / bias {bias.shape} "
                            f"incompatible with feature length {m + 3}")
    w_emb, w_xyz = weight.data[:, :m], weight.data[:, m:]
    shared = w_emb @ embedding.data + bias.data
    out = coords.data @ w_xyz.T + shared

    def vjp(g: np.ndarray):
        gsum = g.sum(axis=0)
        ge = gsum @ w_emb if embedding.requires_grad else None
        gc = g @ w_xyz if coords.requires_grad else None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            gw[:, :m] = np.outer(gsum, embedding.data)
            gw[:, m:] = g.T @ coords.data
        else:
            gw = None
        return ge, gc, gw, (gsum if bias.requires_grad else None)

    return emit("point_linear", (embedding, coords, weight, bias), out, vjp)
