"""Convolution layers materialized as explicit matrices.

Images are vectorized row-major everywhere: pixel ``(i, j)`` of an
``rows x cols`` map sits at index ``i * cols + j``. Convolution follows the
deep-learning convention (cross-correlation, no kernel flip):

    out[i, j] = sum_{p,q} k[p, q] * x[i + p, j + q]

with indices taken modulo ``n`` for the circular variant.
"""
from __future__ import annotations

import enum

import numpy as np

from .errors import KernelTooLarge


class ConvMatrixKind(enum.Enum):
    VALID = "valid"
    CIRCULAR = "circular"


def as_kernel(k, *, single_channel: bool = False) -> np.ndarray:
    """Validate a kernel: ``(w, h)`` or ``(out, in, w, h)`` of finite floats."""
    a = np.asarray(k, dtype=float)
    if a.ndim not in (2, 4):
        raise ValueError(f"kernel must be 2D or 4D, got shape {a.shape}")
    if min(a.shape) < 1:
        raise ValueError(f"kernel dimensions must be >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("kernel entries must be finite")
    if single_channel and a.ndim != 2:
        raise ValueError(f"expected a single-channel 2D kernel, got shape {a.shape}")
    return a


def _check_fits(k: np.ndarray, rows: int, cols: int) -> None:
    w, h = k.shape[-2:]
    if w > rows or h > cols:
        raise KernelTooLarge(f"kernel {w}x{h} does not fit a {rows}x{cols} input")


def valid_conv_matrix(k, input_rows: int, input_cols: int) -> np.ndarray:
    """Matrix of valid (no padding, stride 1) convolution by a 2D kernel.

    Shape is ``((rows-w+1)*(cols-h+1), rows*cols)``.
    """
    k = as_kernel(k, single_channel=True)
    _check_fits(k, input_rows, input_cols)
    w, h = k.shape
    out_r, out_c = input_rows - w + 1, input_cols - h + 1
    m = np.zeros((out_r * out_c, input_rows * input_cols))
    i, j, p, q = np.meshgrid(np.arange(out_r), np.arange(out_c), np.arange(w), np.arange(h),
                             indexing="ij")
    m[(i * out_c + j).ravel(), ((i + p) * input_cols + (j + q)).ravel()] = k[p, q].ravel()
    return m


def circulant_conv_matrix(k, n: int) -> np.ndarray:
    """Doubly block circulant ``n^2 x n^2`` matrix of circular convolution.

    ``M[(i, j), (a, b)] = K[(a - i) % n, (b - j) % n]`` where ``K`` is the
    kernel zero-padded to ``n x n``.
    """
    k = as_kernel(k, single_channel=True)
    _check_fits(k, n, n)
    padded = np.zeros((n, n))
    padded[: k.shape[0], : k.shape[1]] = k
    idx = np.arange(n)
    di = (idx[None, :] - idx[:, None]) % n  # di[i, a] = (a - i) % n
    # m4[i, j, a, b] = padded[di[i, a], di[j, b]]
    m4 = padded[di[:, None, :, None], di[None, :, None, :]]
    return m4.reshape(n * n, n * n)


def conv_matrix(k, rows: int, cols: int | None = None,
                kind: ConvMatrixKind = ConvMatrixKind.VALID) -> np.ndarray:
    if kind is ConvMatrixKind.VALID:
        return valid_conv_matrix(k, rows, rows if cols is None else cols)
    if cols is not None and cols != rows:
        raise ValueError("circular convolution matrices are square (n x n inputs)")
    return circulant_conv_matrix(k, rows)


def valid_conv2d(x: np.ndarray, k) -> np.ndarray:
    """Direct valid cross-correlation of a 2D map with a 2D kernel."""
    k = as_kernel(k, single_channel=True)
    x = np.asarray(x, dtype=float)
    _check_fits(k, *x.shape)
    w, h = k.shape
    out = np.zeros((x.shape[0] - w + 1, x.shape[1] - h + 1))
    for p in range(w):
        for q in range(h):
            out += k[p, q] * x[p:p + out.shape[0], q:q + out.shape[1]]
    return out


def circular_conv2d(x: np.ndarray, k) -> np.ndarray:
    """Circular cross-correlation; ``x`` is ``n x n`` (or ``rows x cols``)."""
    k = as_kernel(k, single_channel=True)
    x = np.asarray(x, dtype=float)
    _check_fits(k, *x.shape)
    out = np.zeros_like(x)
    for p in range(k.shape[0]):
        for q in range(k.shape[1]):
            out += k[p, q] * np.roll(x, shift=(-p, -q), axis=(0, 1))
    return out
