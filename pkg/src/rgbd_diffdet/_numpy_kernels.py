"""Pure-numpy reference path for the hot kernels.

Float arithmetic is written element by element (no BLAS) so results match
the numba path bit for bit.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NEAR_PLANE = 0.1


def project_scatter(points, tr, r0, p2, width, height):
    """Min-depth splat of velodyne points into a (height, width) raster.

    ``points`` is (N, >=3) float64.  Returns float64 with 0.0 for empty pixels.
    """
    x = points[:, 0]
    y = points[:, 1]
    z = points[:, 2]
    vx = tr[0, 0] * x + tr[0, 1] * y + tr[0, 2] * z + tr[0, 3]
    vy = tr[1, 0] * x + tr[1, 1] * y + tr[1, 2] * z + tr[1, 3]
    vz = tr[2, 0] * x + tr[2, 1] * y + tr[2, 2] * z + tr[2, 3]
    cx = r0[0, 0] * vx + r0[0, 1] * vy + r0[0, 2] * vz
    cy = r0[1, 0] * vx + r0[1, 1] * vy + r0[1, 2] * vz
    cz = r0[2, 0] * vx + r0[2, 1] * vy + r0[2, 2] * vz

    hu = p2[0, 0] * cx + p2[0, 1] * cy + p2[0, 2] * cz + p2[0, 3]
    hv = p2[1, 0] * cx + p2[1, 1] * cy + p2[1, 2] * cz + p2[1, 3]
    hw = p2[2, 0] * cx + p2[2, 1] * cy + p2[2, 2] * cz + p2[2, 3]

    keep = (cz > NEAR_PLANE) & (hw > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(hu / hw + 0.5)
        v = np.floor(hv / hw + 0.5)
    keep &= (u >= 0) & (u < width) & (v >= 0) & (v < height)

    out = np.full((height, width), np.inf)
    flat = v[keep].astype(np.int64) * width + u[keep].astype(np.int64)
    np.minimum.at(out.reshape(-1), flat, cz[keep])
    out[np.isinf(out)] = 0.0
    return out


def _rect_reduce(a, k, reducer, pad_value):
    r = k // 2
    padded = np.pad(a, ((0, 0), (r, r)), constant_values=pad_value)
    rows = reducer(sliding_window_view(padded, k, axis=1), axis=-1)
    padded = np.pad(rows, ((r, r), (0, 0)), constant_values=pad_value)
    return reducer(sliding_window_view(padded, k, axis=0), axis=-1)


def _mask_reduce(a, mask, reducer, pad_value):
    kh, kw = mask.shape
    rh, rw = kh // 2, kw // 2
    h, w = a.shape
    padded = np.pad(a, ((rh, rh), (rw, rw)), constant_values=pad_value)
    out = np.full_like(a, pad_value)
    for dy in range(kh):
        for dx in range(kw):
            if mask[dy, dx]:
                reducer(out, padded[dy : dy + h, dx : dx + w], out=out)
    return out


def min_filter_rect(a, k):
    return _rect_reduce(a, k, np.min, np.inf)


def max_filter_rect(a, k):
    return _rect_reduce(a, k, np.max, -np.inf)


def min_filter_mask(a, mask):
    return _mask_reduce(a, mask, np.minimum, np.inf)


def max_filter_mask(a, mask):
    return _mask_reduce(a, mask, np.maximum, -np.inf)


def median3_valid(a):
    """3x3 median over valid (> 0) neighbours, evaluated at valid pixels only."""
    h, w = a.shape
    padded = np.pad(a, 1, constant_values=0.0)
    win = sliding_window_view(padded, (3, 3)).reshape(h, w, 9)
    win = np.where(win > 0.0, win, np.nan)
    with np.errstate(all="ignore"):
        med = _nanmedian_sorted(win)
    return np.where(a > 0.0, med, 0.0)


def _nanmedian_sorted(win):
    # np.nanmedian averages the two middle values as (a + b) / 2 through
    # np.mean; spell it out so the numba path can reproduce it exactly.
    s = np.sort(win, axis=-1)  # NaNs sort last
    n = np.sum(~np.isnan(win), axis=-1)
    lo = np.take_along_axis(s, np.maximum((n - 1) // 2, 0)[..., None], axis=-1)[..., 0]
    hi = np.take_along_axis(s, np.maximum(n // 2, 0)[..., None], axis=-1)[..., 0]
    return np.where(n % 2 == 1, lo, (lo + hi) * 0.5)


def column_extend(a):
    """Copy each column's topmost valid depth into the invalid pixels above it."""
    out = a.copy()
    valid = a > 0.0
    has = valid.any(axis=0)
    top = np.argmax(valid, axis=0)
    rows = np.arange(a.shape[0])[:, None]
    fill = (rows < top[None, :]) & has[None, :]
    cols = np.broadcast_to(np.arange(a.shape[1]), a.shape)
    out[fill] = a[top[cols[fill]], cols[fill]]
    return out
