"""Pure NumPy fallback for the hot kernels.

Mirrors the compiled backend operation-for-operation: float accumulation
happens in float64 in the same order (``np.add.at`` is sequential), so both
backends produce bit-identical outputs on the same inputs.
"""

from __future__ import annotations

from collections import deque

import numpy as np

BACKEND = "pure"


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion with a (2r+1) square; outside the frame counts as 0."""
    if radius <= 0:
        return mask.copy()
    out = mask.astype(np.uint8)
    for axis in (0, 1):
        out = _slide(out, radius, axis, pad_value=0, take_min=True)
    return out


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1) square; outside the frame counts as 0."""
    if radius <= 0:
        return mask.copy()
    out = mask.astype(np.uint8)
    for axis in (0, 1):
        out = _slide(out, radius, axis, pad_value=0, take_min=False)
    return out


def _slide(arr: np.ndarray, radius: int, axis: int, pad_value: int, take_min: bool) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, constant_values=pad_value)
    win = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=axis)
    return (win.min(axis=-1) if take_min else win.max(axis=-1)).astype(np.uint8)


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected components; labels 1..n in raster order of first pixel."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    fg = mask != 0
    n = 0
    neigh = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    for sy, sx in zip(*np.nonzero(fg)):
        if labels[sy, sx]:
            continue
        n += 1
        labels[sy, sx] = n
        queue = deque([(sy, sx)])
        while queue:
            y, x = queue.popleft()
            for dy, dx in neigh:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not labels[ny, nx]:
                    labels[ny, nx] = n
                    queue.append((ny, nx))
    return labels, n


def dog_extrema(d0: np.ndarray, d1: np.ndarray, d2: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Strict 26-neighbor extrema of d1 with |value| above threshold.

    Returns (ys, xs) in raster order; the 1-pixel image border is excluded.
    """
    c = d1[1:-1, 1:-1]
    is_max = np.abs(c) >= threshold
    is_min = is_max.copy()
    for layer in (d0, d1, d2):
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                if layer is d1 and dy == 1 and dx == 1:
                    continue
                nb = layer[dy : dy + c.shape[0], dx : dx + c.shape[1]]
                is_max &= c > nb
                is_min &= c < nb
    ys, xs = np.nonzero(is_max | is_min)
    return (ys + 1).astype(np.int32), (xs + 1).astype(np.int32)


def orientation_hist(
    mag: np.ndarray,
    ori: np.ndarray,
    ys: np.ndarray,
    xs: np.ndarray,
    radius: int,
    wtable: np.ndarray,
    nbins: int,
) -> np.ndarray:
    """Gaussian-weighted orientation histogram around each integer center."""
    h, w = mag.shape
    n = len(ys)
    out = np.zeros((n, nbins), dtype=np.float64)
    scale = nbins / (2.0 * np.pi)
    for k in range(n):
        cy, cx = int(ys[k]), int(xs[k])
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
        wpatch = wtable[y0 - cy + radius : y1 - cy + radius, x0 - cx + radius : x1 - cx + radius]
        bins = (ori[y0:y1, x0:x1] * scale).astype(np.int64) % nbins
        weights = (wpatch * mag[y0:y1, x0:x1]).ravel()
        np.add.at(out[k], bins.ravel(), weights)
    return out


def descriptors(
    mag: np.ndarray,
    ori: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    cos_t: np.ndarray,
    sin_t: np.ndarray,
    thetas: np.ndarray,
    radius: int,
    cell_size: float,
    n_cells: int,
    n_ori: int,
    wtable: np.ndarray,
) -> np.ndarray:
    """Gradient-histogram descriptors (n_cells x n_cells x n_ori) per keypoint.

    Pixel contributions are binned into rotated cell coordinates with
    trilinear interpolation; out-of-range contributions are added with zero
    weight at index 0 so the accumulation order matches the compiled kernel.
    """
    h, w = mag.shape
    n = len(xs)
    half = n_cells / 2.0 - 0.5
    two_pi = 2.0 * np.pi
    dlen = n_cells * n_cells * n_ori
    out = np.zeros((n, dlen), dtype=np.float64)
    for k in range(n):
        x, y = float(xs[k]), float(ys[k])
        ct, st, th = float(cos_t[k]), float(sin_t[k]), float(thetas[k])
        # floor(v + 0.5) on both backends; C round() ties differ from Python's
        cy, cx = int(np.floor(y + 0.5)), int(np.floor(x + 0.5))
        y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
        x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        jj, ii = np.meshgrid(np.arange(x0, x1, dtype=np.float64), np.arange(y0, y1, dtype=np.float64))
        u = jj - x
        v = ii - y
        cbin = (ct * u + st * v) / cell_size + half
        rbin = (-st * u + ct * v) / cell_size + half
        obin = ((ori[y0:y1, x0:x1] - th) % two_pi) * (n_ori / two_pi)
        wpatch = wtable[y0 - cy + radius : y1 - cy + radius, x0 - cx + radius : x1 - cx + radius]
        wgt = wpatch * mag[y0:y1, x0:x1]
        inside = (rbin > -1.0) & (rbin < n_cells) & (cbin > -1.0) & (cbin < n_cells)
        wgt = np.where(inside, wgt, 0.0)

        r0 = np.floor(rbin)
        c0 = np.floor(cbin)
        o0 = np.floor(obin)
        dr = rbin - r0
        dc = cbin - c0
        do = obin - o0
        r0 = r0.astype(np.int64)
        c0 = c0.astype(np.int64)
        o0 = o0.astype(np.int64) % n_ori

        idx = np.empty(r0.shape + (8,), dtype=np.int64)
        val = np.empty(r0.shape + (8,), dtype=np.float64)
        slot = 0
        for ri, rw in ((r0, 1.0 - dr), (r0 + 1, dr)):
            rok = (ri >= 0) & (ri < n_cells)
            for ci, cw in ((c0, 1.0 - dc), (c0 + 1, dc)):
                cok = rok & (ci >= 0) & (ci < n_cells)
                base = (np.clip(ri, 0, n_cells - 1) * n_cells + np.clip(ci, 0, n_cells - 1)) * n_ori
                for oi, ow in ((o0, 1.0 - do), ((o0 + 1) % n_ori, do)):
                    contrib = wgt * rw * cw * ow
                    idx[..., slot] = np.where(cok, base + oi, 0)
                    val[..., slot] = np.where(cok, contrib, 0.0)
                    slot += 1
        np.add.at(out[k], idx.ravel(), val.ravel())
    return out
