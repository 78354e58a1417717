# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics match kernels._pure bit-for-bit."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, fmod

cnp.import_array()

BACKEND = "compiled"


def erode(cnp.uint8_t[:, :] mask, int radius):
    if radius <= 0:
        return np.asarray(mask).copy()
    return _morph(mask, radius, 1)


def dilate(cnp.uint8_t[:, :] mask, int radius):
    if radius <= 0:
        return np.asarray(mask).copy()
    return _morph(mask, radius, 0)


cdef _morph(cnp.uint8_t[:, :] mask, int radius, int is_erode):
    cdef int h = mask.shape[0], w = mask.shape[1]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] tmp_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out_arr = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] tmp = tmp_arr, out = out_arr
    cdef int y, x, t, lo, hi
    cdef cnp.uint8_t acc
    # horizontal pass
    for y in range(h):
        for x in range(w):
            lo = x - radius
            hi = x + radius
            if is_erode and (lo < 0 or hi >= w):
                tmp[y, x] = 0
                continue
            if lo < 0:
                lo = 0
            if hi >= w:
                hi = w - 1
            acc = 1 if is_erode else 0
            for t in range(lo, hi + 1):
                if is_erode:
                    if mask[y, t] == 0:
                        acc = 0
                        break
                else:
                    if mask[y, t] != 0:
                        acc = 1
                        break
            tmp[y, x] = acc
    # vertical pass
    for y in range(h):
        for x in range(w):
            lo = y - radius
            hi = y + radius
            if is_erode and (lo < 0 or hi >= h):
                out[y, x] = 0
                continue
            if lo < 0:
                lo = 0
            if hi >= h:
                hi = h - 1
            acc = 1 if is_erode else 0
            for t in range(lo, hi + 1):
                if is_erode:
                    if tmp[t, x] == 0:
                        acc = 0
                        break
                else:
                    if tmp[t, x] != 0:
                        acc = 1
                        break
            out[y, x] = acc
    return out_arr


def label_components(cnp.uint8_t[:, :] mask):
    cdef int h = mask.shape[0], w = mask.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=2] labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, :] labels = labels_arr
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack_arr = np.empty(h * w, dtype=np.int64)
    cdef cnp.int64_t[:] stack = stack_arr
    cdef int n = 0
    cdef Py_ssize_t sy, sx, y, x, ny, nx, top
    cdef long pos
    cdef int dy, dx
    for sy in range(h):
        for sx in range(w):
            if mask[sy, sx] == 0 or labels[sy, sx] != 0:
                continue
            n += 1
            labels[sy, sx] = n
            stack[0] = sy * w + sx
            top = 1
            while top > 0:
                top -= 1
                pos = stack[top]
                y = pos // w
                x = pos - y * w
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        ny = y + dy
                        nx = x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] != 0 and labels[ny, nx] == 0:
                            labels[ny, nx] = n
                            stack[top] = ny * w + nx
                            top += 1
    return labels_arr, n


def dog_extrema(cnp.float32_t[:, :] d0, cnp.float32_t[:, :] d1, cnp.float32_t[:, :] d2, double threshold):
    cdef int h = d1.shape[0], w = d1.shape[1]
    cdef list ys = [], xs = []
    cdef int y, x, dy, dx
    cdef float v
    cdef bint is_max, is_min
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            v = d1[y, x]
            if v < threshold and -v < threshold:
                continue
            is_max = True
            is_min = True
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    if not (is_max or is_min):
                        break
                    if v <= d0[y + dy, x + dx]:
                        is_max = False
                    if v >= d0[y + dy, x + dx]:
                        is_min = False
                    if v <= d2[y + dy, x + dx]:
                        is_max = False
                    if v >= d2[y + dy, x + dx]:
                        is_min = False
                    if dy == 0 and dx == 0:
                        continue
                    if v <= d1[y + dy, x + dx]:
                        is_max = False
                    if v >= d1[y + dy, x + dx]:
                        is_min = False
            if is_max or is_min:
                ys.append(y)
                xs.append(x)
    return np.asarray(ys, dtype=np.int32), np.asarray(xs, dtype=np.int32)


def orientation_hist(
    cnp.float64_t[:, :] mag,
    cnp.float64_t[:, :] ori,
    cnp.int64_t[:] ys,
    cnp.int64_t[:] xs,
    int radius,
    cnp.float64_t[:, :] wtable,
    int nbins,
):
    cdef int h = mag.shape[0], w = mag.shape[1]
    cdef Py_ssize_t n = ys.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n, nbins), dtype=np.float64)
    cdef cnp.float64_t[:, :] out = out_arr
    cdef double scale = nbins / (2.0 * np.pi)
    cdef Py_ssize_t k
    cdef int cy, cx, y0, y1, x0, x1, y, x
    cdef long b
    for k in range(n):
        cy = <int>ys[k]
        cx = <int>xs[k]
        y0 = cy - radius if cy - radius > 0 else 0
        y1 = cy + radius + 1 if cy + radius + 1 < h else h
        x0 = cx - radius if cx - radius > 0 else 0
        x1 = cx + radius + 1 if cx + radius + 1 < w else w
        for y in range(y0, y1):
            for x in range(x0, x1):
                b = (<long>(ori[y, x] * scale)) % nbins
                out[k, b] += wtable[y - cy + radius, x - cx + radius] * mag[y, x]
    return out_arr


def descriptors(
    cnp.float64_t[:, :] mag,
    cnp.float64_t[:, :] ori,
    cnp.float64_t[:] xs,
    cnp.float64_t[:] ys,
    cnp.float64_t[:] cos_t,
    cnp.float64_t[:] sin_t,
    cnp.float64_t[:] thetas,
    int radius,
    double cell_size,
    int n_cells,
    int n_ori,
    cnp.float64_t[:, :] wtable,
):
    cdef int h = mag.shape[0], w = mag.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    cdef int dlen = n_cells * n_cells * n_ori
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n, dlen), dtype=np.float64)
    cdef cnp.float64_t[:, :] out = out_arr
    cdef double half = n_cells / 2.0 - 0.5
    cdef double two_pi = 2.0 * np.pi
    cdef Py_ssize_t k
    cdef int cy, cx, y0, y1, x0, x1, y, x, sr, sc, so
    cdef double xf, yf, ct, st, th, u, v, cbin, rbin, obin, wgt, o
    cdef double r0, c0, o0, dr, dc, do, rw, cw, ow, contrib
    cdef long ri, ci, oi, base, obase
    for k in range(n):
        xf = xs[k]
        yf = ys[k]
        ct = cos_t[k]
        st = sin_t[k]
        th = thetas[k]
        cy = <int>floor(yf + 0.5)
        cx = <int>floor(xf + 0.5)
        y0 = cy - radius if cy - radius > 0 else 0
        y1 = cy + radius + 1 if cy + radius + 1 < h else h
        x0 = cx - radius if cx - radius > 0 else 0
        x1 = cx + radius + 1 if cx + radius + 1 < w else w
        for y in range(y0, y1):
            for x in range(x0, x1):
                u = x - xf
                v = y - yf
                cbin = (ct * u + st * v) / cell_size + half
                rbin = (-st * u + ct * v) / cell_size + half
                o = fmod(ori[y, x] - th, two_pi)
                if o < 0:
                    o += two_pi
                obin = o * (n_ori / two_pi)
                wgt = wtable[y - cy + radius, x - cx + radius] * mag[y, x]
                if not (rbin > -1.0 and rbin < n_cells and cbin > -1.0 and cbin < n_cells):
                    wgt = 0.0
                r0 = floor(rbin)
                c0 = floor(cbin)
                o0 = floor(obin)
                dr = rbin - r0
                dc = cbin - c0
                do = obin - o0
                for sr in range(2):
                    ri = <long>r0 + sr
                    rw = dr if sr else 1.0 - dr
                    for sc in range(2):
                        ci = <long>c0 + sc
                        cw = dc if sc else 1.0 - dc
                        if 0 <= ri < n_cells and 0 <= ci < n_cells:
                            base = (ri * n_cells + ci) * n_ori
                            for so in range(2):
                                oi = ((<long>o0) + so) % n_ori
                                ow = do if so else 1.0 - do
                                contrib = wgt * rw * cw * ow
                                out[k, base + oi] += contrib
                        else:
                            # keep accumulation order identical to the fallback
                            for so in range(2):
                                out[k, 0] += 0.0
    return out_arr
