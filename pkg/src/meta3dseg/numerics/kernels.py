"""conv3d kernels: im2col + GEMM, so the heavy lifting is one BLAS matmul per call."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """``[C, D, H, W]`` -> ``[C*k^3, D'*H'*W']`` patch matrix."""
    c = x.shape[0]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k, k), axis=(1, 2, 3))[:, ::stride, ::stride, ::stride]
    # win: [C, D', H', W', k, k, k]
    return np.ascontiguousarray(win.transpose(0, 4, 5, 6, 1, 2, 3)).reshape(c * k ** 3, -1)


def col2im(cols: np.ndarray, shape: tuple[int, ...], k: int, stride: int, padding: int) -> np.ndarray:
    c, d, h, w = shape
    od, oh, ow = (_out_size(n, k, stride, padding) for n in (d, h, w))
    cols = cols.reshape(c, k, k, k, od, oh, ow)
    out = np.zeros((c, d + 2 * padding, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for a in range(k):
        for b in range(k):
            for e in range(k):
                out[:, a:a + stride * od:stride, b:b + stride * oh:stride,
                    e:e + stride * ow:stride] += cols[:, a, b, e]
    if padding:
        out = out[:, padding:padding + d, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


def conv3d_forward(x, kernel, bias, stride, padding):
    c_out, _, k = kernel.shape[:3]
    od, oh, ow = (_out_size(n, k, stride, padding) for n in x.shape[1:])
    cols = im2col(x, k, stride, padding)
    out = kernel.reshape(c_out, -1) @ cols + bias[:, None]
    return out.reshape(c_out, od, oh, ow), cols


def conv3d_backward_input(g, kernel, x_shape, stride, padding):
    c_out, _, k = kernel.shape[:3]
    dcols = kernel.reshape(c_out, -1).T @ g.reshape(c_out, -1)
    return col2im(dcols, x_shape, k, stride, padding)


def conv3d_backward_kernel(g, cols, kernel_shape):
    c_out = kernel_shape[0]
    return (g.reshape(c_out, -1) @ cols.T).reshape(kernel_shape)
