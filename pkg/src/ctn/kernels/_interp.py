"""Bilinear interpolation weights (align_corners=False)."""

import numpy as np


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Return the (n_out, n_in) matrix mapping a 1-D signal onto a resampled grid.

    Output sample ``o`` reads source coordinate ``(o + 0.5) * n_in / n_out - 0.5``,
    clamped to ``[0, n_in - 1]``; each row holds at most two nonzero weights
    summing to one.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"interpolation sizes must be positive, got {n_in} -> {n_out}")
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        if src < 0.0:
            src = 0.0
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        mat[o, i0] += 1.0 - w1
        mat[o, i1] += w1
    return mat
