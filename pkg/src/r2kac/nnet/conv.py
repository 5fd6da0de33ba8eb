"""Dilated 2D cross-correlation, forward and backward, on NCHW arrays."""

from __future__ import annotations

import numpy as np

from ..imagekernel import ParameterError


def _out_size(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def same_padding(k: int, dilation: int) -> int:
    return dilation * (k - 1) // 2


def _check(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    if x.ndim != 4 or w.ndim != 4:
        raise ParameterError(f"expected NCHW input and OIKK weight, got {x.shape} and {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ParameterError(f"weight expects {w.shape[1]} input channels, input has {x.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise ParameterError("weights must be square")
    if b is not None and b.shape != (w.shape[0],):
        raise ParameterError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride]
    return cols


def conv2d_dilated_fwd(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    dilation: int = 1,
    padding: int | None = None,
    stride: int = 1,
):
    """Cross-correlate ``x`` (N, C, H, W) with ``w`` (O, C, k, k).

    ``padding=None`` zero-pads by ``dilation*(k-1)//2``, which keeps H and W
    at stride 1.  Returns ``(out, cache)``; the cache feeds
    :func:`conv2d_dilated_bwd`.
    """
    _check(x, w, b)
    k = w.shape[2]
    pad = same_padding(k, dilation) if padding is None else padding
    h_in, w_in = x.shape[2:]
    ho = _out_size(h_in, k, stride, dilation, pad)
    wo = _out_size(w_in, k, stride, dilation, pad)
    if ho < 1 or wo < 1:
        raise ParameterError("convolution output would be empty")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, dilation, ho, wo)
    n, o = x.shape[0], w.shape[0]
    out = np.matmul(w.reshape(o, -1), cols.reshape(n, -1, ho * wo)).reshape(n, o, ho, wo)
    if b is not None:
        out += b[None, :, None, None]
    cache = (x.shape, xp.shape, cols, w, pad, stride, dilation, b is not None)
    return out, cache


def conv2d_dilated_bwd(gout: np.ndarray, cache):
    """Gradients ``(dx, dw, db)`` of a convolution given the upstream gradient."""
    x_shape, xp_shape, cols, w, pad, stride, dilation, has_bias = cache
    n, o, ho, wo = gout.shape
    k = w.shape[2]
    g = gout.reshape(n, o, ho * wo)
    cols2 = cols.reshape(n, -1, ho * wo)
    dw = np.einsum("nol,nml->om", g, cols2).reshape(w.shape)
    db = gout.sum(axis=(0, 2, 3)) if has_bias else None
    dcols = np.matmul(w.reshape(o, -1).T, g).reshape(n, w.shape[1], k, k, ho, wo)
    dxp = np.zeros(xp_shape, dtype=gout.dtype)
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            dxp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
    h, wd = x_shape[2:]
    dx = dxp[:, :, pad : pad + h, pad : pad + wd]
    return dx, dw, db
