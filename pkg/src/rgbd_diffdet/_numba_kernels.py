"""numba-compiled versions of the kernels in ``_numpy_kernels``.

Same signatures, same arithmetic order; single-threaded.
"""

import numpy as np
from numba import njit

NEAR_PLANE = 0.1


@njit(cache=True)
def project_scatter(points, tr, r0, p2, width, height):
    out = np.full((height, width), np.inf)
    for i in range(points.shape[0]):
        x = points[i, 0]
        y = points[i, 1]
        z = points[i, 2]
        vx = tr[0, 0] * x + tr[0, 1] * y + tr[0, 2] * z + tr[0, 3]
        vy = tr[1, 0] * x + tr[1, 1] * y + tr[1, 2] * z + tr[1, 3]
        vz = tr[2, 0] * x + tr[2, 1] * y + tr[2, 2] * z + tr[2, 3]
        cx = r0[0, 0] * vx + r0[0, 1] * vy + r0[0, 2] * vz
        cy = r0[1, 0] * vx + r0[1, 1] * vy + r0[1, 2] * vz
        cz = r0[2, 0] * vx + r0[2, 1] * vy + r0[2, 2] * vz
        if not cz > NEAR_PLANE:
            continue
        hu = p2[0, 0] * cx + p2[0, 1] * cy + p2[0, 2] * cz + p2[0, 3]
        hv = p2[1, 0] * cx + p2[1, 1] * cy + p2[1, 2] * cz + p2[1, 3]
        hw = p2[2, 0] * cx + p2[2, 1] * cy + p2[2, 2] * cz + p2[2, 3]
        if not hw > 0.0:
            continue
        u = np.floor(hu / hw + 0.5)
        v = np.floor(hv / hw + 0.5)
        if not (u >= 0 and u < width and v >= 0 and v < height):
            continue
        iu = int(u)
        iv = int(v)
        if cz < out[iv, iu]:
            out[iv, iu] = cz
    for r in range(height):
        for c in range(width):
            if out[r, c] == np.inf:
                out[r, c] = 0.0
    return out


@njit(cache=True)
def _rect_pass(a, k, use_max, axis):
    h, w = a.shape
    r = k // 2
    out = np.empty_like(a)
    fill = -np.inf if use_max else np.inf
    for i in range(h):
        for j in range(w):
            acc = fill
            for d in range(-r, r + 1):
                if axis == 1:
                    jj = j + d
                    if jj < 0 or jj >= w:
                        continue
                    val = a[i, jj]
                else:
                    ii = i + d
                    if ii < 0 or ii >= h:
                        continue
                    val = a[ii, j]
                if use_max:
                    if val > acc:
                        acc = val
                elif val < acc:
                    acc = val
            out[i, j] = acc
    return out


@njit(cache=True)
def min_filter_rect(a, k):
    return _rect_pass(_rect_pass(a, k, False, 1), k, False, 0)


@njit(cache=True)
def max_filter_rect(a, k):
    return _rect_pass(_rect_pass(a, k, True, 1), k, True, 0)


@njit(cache=True)
def _mask_pass(a, mask, use_max):
    h, w = a.shape
    kh, kw = mask.shape
    rh = kh // 2
    rw = kw // 2
    out = np.empty_like(a)
    fill = -np.inf if use_max else np.inf
    for i in range(h):
        for j in range(w):
            acc = fill
            for dy in range(kh):
                ii = i + dy - rh
                if ii < 0 or ii >= h:
                    continue
                for dx in range(kw):
                    if not mask[dy, dx]:
                        continue
                    jj = j + dx - rw
                    if jj < 0 or jj >= w:
                        continue
                    val = a[ii, jj]
                    if use_max:
                        if val > acc:
                            acc = val
                    elif val < acc:
                        acc = val
            out[i, j] = acc
    return out


@njit(cache=True)
def min_filter_mask(a, mask):
    return _mask_pass(a, mask, False)


@njit(cache=True)
def max_filter_mask(a, mask):
    return _mask_pass(a, mask, True)


@njit(cache=True)
def median3_valid(a):
    h, w = a.shape
    out = np.zeros_like(a)
    buf = np.empty(9)
    for i in range(h):
        for j in range(w):
            if not a[i, j] > 0.0:
                continue
            n = 0
            for ii in range(max(i - 1, 0), min(i + 2, h)):
                for jj in range(max(j - 1, 0), min(j + 2, w)):
                    val = a[ii, jj]
                    if val > 0.0:
                        # insertion sort
                        p = n
                        while p > 0 and buf[p - 1] > val:
                            buf[p] = buf[p - 1]
                            p -= 1
                        buf[p] = val
                        n += 1
            if n % 2 == 1:
                out[i, j] = buf[(n - 1) // 2]
            else:
                out[i, j] = (buf[(n - 1) // 2] + buf[n // 2]) * 0.5
    return out


@njit(cache=True)
def column_extend(a):
    h, w = a.shape
    out = a.copy()
    for j in range(w):
        top = -1
        for i in range(h):
            if a[i, j] > 0.0:
                top = i
                break
        if top > 0:
            for i in range(top):
                out[i, j] = a[top, j]
    return out


def warmup():
    a = np.zeros((4, 4))
    a[1, 1] = 1.0
    mask = np.ones((3, 3), dtype=np.bool_)
    min_filter_rect(a, 3)
    max_filter_rect(a, 3)
    min_filter_mask(a, mask)
    max_filter_mask(a, mask)
    median3_valid(a)
    column_extend(a)
    eye = np.eye(3, 4)
    project_scatter(np.zeros((1, 4)), eye, np.eye(3), eye, 4, 4)
