"""Pure numpy versions of the data-movement kernels.

Semantics match the compiled module exactly; the compiled module is preferred
when it is importable.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._interp import interp_matrix

NAME = "python"


def im2col(x, k, stride, pad):
    c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (c, ho, wo, ky, kx) -> (c, ky, kx, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad):
    c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(c, k, k, ho, wo)
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            out[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += cols[:, ky, kx]
    if pad:
        out = out[:, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def maxpool2x2(x):
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool2x2_backward(g, idx):
    c, ho, wo = g.shape
    full = np.zeros((c, ho, wo, 4), dtype=np.float64)
    np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
    full = full.reshape(c, ho, wo, 2, 2).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(full.reshape(c, 2 * ho, 2 * wo))


def upsample2x(x):
    c, h, w = x.shape
    uh = interp_matrix(h, 2 * h)
    uw = interp_matrix(w, 2 * w)
    return np.ascontiguousarray(uh @ x @ uw.T)


def upsample2x_backward(g):
    c, h2, w2 = g.shape
    uh = interp_matrix(h2 // 2, h2)
    uw = interp_matrix(w2 // 2, w2)
    return np.ascontiguousarray(uh.T @ g @ uw)
