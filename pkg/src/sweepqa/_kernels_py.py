"""Pure numpy implementations of the hot kernels.

These must stay bit-identical to ``_kernels.pyx``; both use the same
floating-point operation order and integer-only centroid accumulation.
"""

from __future__ import annotations

import numpy as np


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out, dtype=np.float64)
    else:
        pos = np.arange(n_out, dtype=np.float64) * float(n_in - 1) / float(n_out - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a ``(T, H, W)`` uint8 stack."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    _, h, w = frames.shape
    y0, y1, wy = _axis_coords(h, out_h)
    x0, x1, wx = _axis_coords(w, out_w)

    src = frames.astype(np.float64)
    wy = wy[None, :, None]
    wx = wx[None, None, :]
    a = src[:, y0][:, :, x0]
    b = src[:, y0][:, :, x1]
    c = src[:, y1][:, :, x0]
    d = src[:, y1][:, :, x1]
    top = (1.0 - wx) * a + wx * b
    bot = (1.0 - wx) * c + wx * d
    val = (1.0 - wy) * top + wy * bot
    out = np.floor(val + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def _median2_rows(x: np.ndarray) -> np.ndarray:
    """Twice the median along the last axis, as exact integers."""
    n = x.shape[-1]
    srt = np.sort(x, axis=-1).astype(np.int64)
    return srt[..., (n - 1) // 2] + srt[..., n // 2]


def row_centroids(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame centroid along rows of the row-median profile above its median.

    Each row is summarised by its median intensity, so narrow static overlays
    and pixel noise barely move it; rows are then weighted by how far that
    level exceeds the frame's median row level. Returns ``(centroids, valid)``;
    frames with no row above the median are invalid and get the centre row.
    """
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    t, h, _ = frames.shape
    rows = np.arange(h, dtype=np.int64)
    level2 = _median2_rows(frames)  # (t, h), 2x row medians
    med4 = _median2_rows(level2)  # (t,), 4x frame median level
    wgt = np.maximum(2 * level2 - med4[:, None], 0)
    total = wgt.sum(axis=1)
    num = (wgt * rows[None, :]).sum(axis=1)
    cent = np.full(t, (h - 1) / 2.0, dtype=np.float64)
    valid = total > 0
    for k in np.flatnonzero(valid):
        cent[k] = int(num[k]) / int(total[k])
    return cent, valid
