"""Dense tensor primitives.

Tensors are plain ``numpy.ndarray`` values in row-major order; image batches use
``(batch, channel, height, width)``. The helpers here add the shape checking and
the exact conventions (zero "same" padding, im2col column layout, pixel-center
bilinear sampling) that the layers rely on.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, ShapeError

PRECISIONS = {"f32": np.float32, "f64": np.float64}


class Shape2d(NamedTuple):
    height: int
    width: int

    @classmethod
    def of(cls, value) -> "Shape2d":
        if isinstance(value, int):
            value = (value, value)
        h, w = (int(v) for v in value)
        if h < 1 or w < 1:
            raise ArgumentError(f"spatial size must be positive, got {h}x{w}")
        return cls(h, w)


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ArgumentError(f"unknown precision {precision!r}; use f32 or f64") from None


def as_tensor(x, dtype=np.float64) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"tensors have 1 to 4 dimensions, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def _check_kernel(kernel) -> Shape2d:
    kernel = Shape2d.of(kernel)
    if kernel.height % 2 == 0 or kernel.width % 2 == 0:
        raise ArgumentError(f"unsupported kernel {kernel.height}x{kernel.width}: sides must be odd")
    return kernel


def pad_same(x: np.ndarray, kernel=(3, 3)) -> np.ndarray:
    """Zero-pad the two trailing axes so a valid convolution keeps h x w.

    Works on ``c x h x w`` maps and on ``b x c x h x w`` batches.
    """
    kernel = _check_kernel(kernel)
    if x.ndim < 2:
        raise ShapeError(f"pad_same needs spatial axes, got shape {x.shape}")
    ph, pw = kernel.height // 2, kernel.width // 2
    pads = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(x, pads)


def _out_size(size: int, k: int, stride: int) -> int:
    if size < k or (size - k) % stride:
        raise ShapeError(f"extent {size} does not tile with kernel {k} and stride {stride}")
    return (size - k) // stride + 1


def im2col(x: np.ndarray, kernel=(3, 3), stride: int = 1) -> np.ndarray:
    """Lower an already padded input into receptive-field columns.

    For ``c x h x w`` input the result is ``(c*kh*kw) x (oh*ow)``; rows are
    ordered (channel, kernel row, kernel column) so that a filter bank reshaped
    to ``f x (c*kh*kw)`` multiplies it directly. A leading batch axis is kept.
    """
    kernel = Shape2d.of(kernel)
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"im2col expects c x h x w or b x c x h x w, got {x.shape}")
    kh, kw = kernel
    oh = _out_size(x.shape[-2], kh, stride)
    ow = _out_size(x.shape[-1], kw, stride)
    win = sliding_window_view(x, (kh, kw), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    # (..., c, oh, ow, kh, kw) -> (..., c, kh, kw, oh, ow)
    win = np.moveaxis(win, (-2, -1), (-4, -3))
    lead = x.shape[:-3]
    c = x.shape[-3]
    return np.ascontiguousarray(win).reshape(*lead, c * kh * kw, oh * ow)


def col2im(cols: np.ndarray, padded_shape, kernel=(3, 3), stride: int = 1) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the padded grid."""
    kh, kw = Shape2d.of(kernel)
    *lead, c, hp, wp = padded_shape
    oh = _out_size(hp, kh, stride)
    ow = _out_size(wp, kw, stride)
    cols = cols.reshape(*lead, c, kh, kw, oh, ow)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[..., i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[..., i, j, :, :]
    return out


def _axis_weights(n_in: int, n_out: int):
    # pixel-center sampling: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(x: np.ndarray, out) -> np.ndarray:
    """Resize ``c x h x w`` (or ``h x w``) with half-pixel bilinear sampling."""
    oh, ow = Shape2d.of(out)
    if x.ndim not in (2, 3):
        raise ShapeError(f"bilinear_resize expects h x w or c x h x w, got {x.shape}")
    h, w = x.shape[-2:]
    if (h, w) == (oh, ow):
        return x.copy()
    y0, y1, wy = _axis_weights(h, oh)
    x0, x1, wx = _axis_weights(w, ow)
    wy = wy.astype(x.dtype)[:, None]
    wx = wx.astype(x.dtype)[None, :]
    top = x[..., y0, :]
    bot = x[..., y1, :]
    top = top[..., x0] * (1 - wx) + top[..., x1] * wx
    bot = bot[..., x0] * (1 - wx) + bot[..., x1] * wx
    return top * (1 - wy) + bot * wy


_REDUCERS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(x: np.ndarray, kind: str = "sum", axes=None) -> np.ndarray:
    if kind not in _REDUCERS:
        raise ArgumentError(f"unknown reduction {kind!r}")
    if axes is not None:
        axes = (axes,) if isinstance(axes, int) else tuple(axes)
        if not axes:
            raise ArgumentError("reduction over an empty axis set")
        for ax in axes:
            if not -x.ndim <= ax < x.ndim:
                raise ArgumentError(f"axis {ax} out of range for shape {x.shape}")
    return np.asarray(_REDUCERS[kind](x, axis=axes))
