"""Scale-space keypoints with gradient-histogram descriptors, plus matching.

Detection finds difference-of-Gaussian extrema per octave, refines them to
subpixel positions, filters edge responses, and assigns a dominant gradient
orientation. Descriptors are 128-dim (4x4 spatial cells x 8 orientations).
The per-pixel accumulation loops live in the kernels package; everything
here is shared between backends so their outputs stay identical.

Matching is nearest-neighbor in descriptor space with a ratio test applied
in both directions plus mutual-best filtering, which makes the accepted set
symmetric and injective on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

N_CELLS = 4
N_ORI = 8
DESC_LEN = N_CELLS * N_CELLS * N_ORI
CELL_SIZE = 4.0
DESC_RADIUS = 10
ORI_RADIUS = 6
ORI_BINS = 36
# sigma ladder per octave: k = sqrt(2), five levels -> four DoG bands with
# extrema taken in the middle two; the sigma=2.0 level seeds the next octave.
SIGMA_LADDER = (1.0, 1.4142135623730951, 2.0, 2.8284271247461903, 4.0)
DESC_CLIP = 0.2


@dataclass
class FrameKeypoints:
    """Keypoints of one frame, stored as parallel arrays."""

    frame_index: int
    xs: np.ndarray  # float64 base-image coords
    ys: np.ndarray
    thetas: np.ndarray  # dominant orientation, radians
    responses: np.ndarray
    octaves: np.ndarray  # int16
    blob_ids: np.ndarray  # int32 index into the frame's blob list, -1 = none
    descriptors: np.ndarray  # float32 (n, 128)

    @property
    def count(self) -> int:
        return len(self.xs)

    def subset(self, mask: np.ndarray) -> "FrameKeypoints":
        return FrameKeypoints(
            self.frame_index,
            self.xs[mask],
            self.ys[mask],
            self.thetas[mask],
            self.responses[mask],
            self.octaves[mask],
            self.blob_ids[mask],
            self.descriptors[mask],
        )


@dataclass(frozen=True)
class MatchSet:
    """Accepted matches between two frames' keypoints."""

    idx_a: np.ndarray  # int64 indices into the first FrameKeypoints
    idx_b: np.ndarray
    distances: np.ndarray  # descriptor-space L2

    @property
    def count(self) -> int:
        return len(self.idx_a)


def _upsample2(img: np.ndarray) -> np.ndarray:
    """Linear 2x upsampling; pixel (y, x) maps to (y/2, x/2) in the original."""
    rows = np.empty((img.shape[0] * 2, img.shape[1]), dtype=img.dtype)
    rows[::2] = img
    rows[1:-1:2] = (img[:-1] + img[1:]) / 2.0
    rows[-1] = img[-1]
    out = np.empty((rows.shape[0], rows.shape[1] * 2), dtype=img.dtype)
    out[:, ::2] = rows
    out[:, 1:-1:2] = (rows[:, :-1] + rows[:, 1:]) / 2.0
    out[:, -1] = rows[:, -1]
    return out


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-replicate padding.

    Tap-by-tap accumulation keeps the work single-threaded (no BLAS), which
    matters for clean process-level scaling, and fixes the summation order.
    """
    k = _gauss_kernel(sigma).astype(img.dtype)
    r = len(k) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(i, i + n)
            acc += padded[tuple(sl)] * w
        out = acc
    return out


def _weight_table(radius: int, sigma: float) -> np.ndarray:
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    d2 = ax[:, None] ** 2 + ax[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


_ORI_TABLE = _weight_table(ORI_RADIUS, ORI_RADIUS / 2.0)
_DESC_TABLE = _weight_table(DESC_RADIUS, 0.5 * N_CELLS * CELL_SIZE)


def extract_keypoints(
    frame: np.ndarray,
    frame_index: int,
    labels: np.ndarray | None = None,
    octaves: int = 3,
    contrast_threshold: float = 0.015,
    edge_ratio: float = 10.0,
    max_keypoints: int = 800,
    drop_unassigned: bool = False,
    boxes: list[tuple[int, int, int, int]] | None = None,
    upsample: bool = True,
) -> FrameKeypoints:
    """Detect keypoints and compute descriptors for one grayscale frame.

    When a blob label raster is given, keypoints are tagged with the blob
    containing them (component pixel first, then box containment);
    drop_unassigned additionally discards keypoints outside every blob
    before the (costly) descriptor stage.
    """
    img = frame.astype(np.float32) / np.float32(255.0)
    if upsample:
        img = _upsample2(img)
    scale0 = 0.5 if upsample else 1.0
    cand_x: list[np.ndarray] = []
    cand_y: list[np.ndarray] = []
    cand_r: list[np.ndarray] = []
    cand_o: list[np.ndarray] = []
    grads: list[tuple[np.ndarray, np.ndarray]] = []

    base = _smooth(img, SIGMA_LADDER[0])
    for o in range(octaves):
        if min(base.shape) < 16:
            break
        levels = [base]
        for s0, s1 in zip(SIGMA_LADDER, SIGMA_LADDER[1:]):
            inc = math.sqrt(s1 * s1 - s0 * s0)
            levels.append(_smooth(levels[-1], inc))
        dogs = [np.ascontiguousarray(levels[i + 1] - levels[i]) for i in range(len(levels) - 1)]
        sx_o: list[np.ndarray] = []
        sy_o: list[np.ndarray] = []
        resp_o: list[np.ndarray] = []
        for mid in (1, 2):
            ys, xs = kernels.dog_extrema(dogs[mid - 1], dogs[mid], dogs[mid + 1], contrast_threshold)
            sx, sy, resp = _refine(
                dogs[mid].astype(np.float64), ys, xs, contrast_threshold, edge_ratio
            )
            sx_o.append(sx)
            sy_o.append(sy)
            resp_o.append(resp)
        sx = np.concatenate(sx_o)
        sy = np.concatenate(sy_o)
        resp = np.concatenate(resp_o)
        gy, gx = np.gradient(levels[1])
        mag = np.ascontiguousarray(np.hypot(gx, gy), dtype=np.float64)
        ori = np.ascontiguousarray(np.mod(np.arctan2(gy, gx), 2.0 * np.pi), dtype=np.float64)
        grads.append((mag, ori))
        scale = scale0 * (1 << o)
        cand_x.append(sx * scale)
        cand_y.append(sy * scale)
        cand_r.append(resp)
        cand_o.append(np.full(len(sx), o, dtype=np.int16))
        base = levels[2][::2, ::2]

    if not cand_x:
        return _empty_keypoints(frame_index)
    xs = np.concatenate(cand_x)
    ys = np.concatenate(cand_y)
    resp = np.concatenate(cand_r)
    octs = np.concatenate(cand_o)

    h, w = frame.shape
    inb = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xs, ys, resp, octs = xs[inb], ys[inb], resp[inb], octs[inb]

    if len(xs) > max_keypoints:
        order = np.lexsort((xs, ys, -np.abs(resp)))[:max_keypoints]
        xs, ys, resp, octs = xs[order], ys[order], resp[order], octs[order]

    blob_ids = np.full(len(xs), -1, dtype=np.int32)
    if labels is not None and len(xs):
        pi = np.clip(np.rint(ys), 0, h - 1).astype(np.int64)
        pj = np.clip(np.rint(xs), 0, w - 1).astype(np.int64)
        blob_ids = labels[pi, pj].astype(np.int32) - 1
        if boxes:
            # boundary keypoints can land on a background pixel just outside
            # their component; box containment recovers them
            for i in np.nonzero(blob_ids < 0)[0]:
                for b, (bx1, by1, bx2, by2) in enumerate(boxes):
                    if bx1 <= xs[i] <= bx2 and by1 <= ys[i] <= by2:
                        blob_ids[i] = b
                        break
    if drop_unassigned:
        sel = blob_ids >= 0
        xs, ys, resp, octs, blob_ids = xs[sel], ys[sel], resp[sel], octs[sel], blob_ids[sel]

    order = np.lexsort((xs, ys, octs))
    xs, ys, resp, octs, blob_ids = xs[order], ys[order], resp[order], octs[order], blob_ids[order]

    thetas = np.zeros(len(xs), dtype=np.float64)
    descs = np.zeros((len(xs), DESC_LEN), dtype=np.float32)
    for o in range(len(grads)):
        sel = np.nonzero(octs == o)[0]
        if not len(sel):
            continue
        mag, ori = grads[o]
        scale = scale0 * (1 << o)
        ox = xs[sel] / scale
        oy = ys[sel] / scale
        th = _dominant_orientations(mag, ori, ox, oy)
        thetas[sel] = th
        raw = kernels.descriptors(
            mag,
            ori,
            np.ascontiguousarray(ox),
            np.ascontiguousarray(oy),
            np.cos(th),
            np.sin(th),
            np.ascontiguousarray(th),
            DESC_RADIUS,
            CELL_SIZE,
            N_CELLS,
            N_ORI,
            _DESC_TABLE,
        )
        descs[sel] = _normalize_descriptors(raw)

    return FrameKeypoints(frame_index, xs, ys, thetas, resp, octs, blob_ids, descs)


def _empty_keypoints(frame_index: int) -> FrameKeypoints:
    return FrameKeypoints(
        frame_index,
        np.zeros(0),
        np.zeros(0),
        np.zeros(0),
        np.zeros(0),
        np.zeros(0, dtype=np.int16),
        np.zeros(0, dtype=np.int32),
        np.zeros((0, DESC_LEN), dtype=np.float32),
    )


def _refine(
    d1: np.ndarray, ys: np.ndarray, xs: np.ndarray, contrast_threshold: float, edge_ratio: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadratic subpixel refinement plus contrast and edge-response tests."""
    if not len(ys):
        return np.zeros(0), np.zeros(0), np.zeros(0)
    v = d1[ys, xs]
    dx = (d1[ys, xs + 1] - d1[ys, xs - 1]) / 2.0
    dy = (d1[ys + 1, xs] - d1[ys - 1, xs]) / 2.0
    dxx = d1[ys, xs + 1] + d1[ys, xs - 1] - 2 * v
    dyy = d1[ys + 1, xs] + d1[ys - 1, xs] - 2 * v
    dxy = (d1[ys + 1, xs + 1] - d1[ys + 1, xs - 1] - d1[ys - 1, xs + 1] + d1[ys - 1, xs - 1]) / 4.0

    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    r = edge_ratio
    not_edge = (det > 0) & (tr * tr * r < (r + 1) * (r + 1) * det)

    denom = np.where(np.abs(det) < 1e-12, 1.0, det)
    off_x = np.where(np.abs(det) < 1e-12, 0.0, -(dyy * dx - dxy * dy) / denom)
    off_y = np.where(np.abs(det) < 1e-12, 0.0, -(dxx * dy - dxy * dx) / denom)
    off_x = np.clip(off_x, -0.5, 0.5)
    off_y = np.clip(off_y, -0.5, 0.5)
    refined = v + 0.5 * (dx * off_x + dy * off_y)
    keep = not_edge & (np.abs(refined) >= contrast_threshold)
    return (xs + off_x)[keep], (ys + off_y)[keep], refined[keep]


def _dominant_orientations(mag: np.ndarray, ori: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Peak of the smoothed 36-bin orientation histogram, parabola-refined."""
    hist = kernels.orientation_hist(
        mag,
        ori,
        np.rint(ys).astype(np.int64),
        np.rint(xs).astype(np.int64),
        ORI_RADIUS,
        _ORI_TABLE,
        ORI_BINS,
    )
    for _ in range(2):
        hist = (np.roll(hist, 1, axis=1) + hist + np.roll(hist, -1, axis=1)) / 3.0
    peak = hist.argmax(axis=1)
    left = hist[np.arange(len(hist)), (peak - 1) % ORI_BINS]
    right = hist[np.arange(len(hist)), (peak + 1) % ORI_BINS]
    center = hist[np.arange(len(hist)), peak]
    denom = left - 2.0 * center + right
    shift = np.where(np.abs(denom) < 1e-12, 0.0, 0.5 * (left - right) / denom)
    theta = (peak + shift + 0.5) * (2.0 * np.pi / ORI_BINS)
    return np.mod(theta, 2.0 * np.pi)


def _normalize_descriptors(raw: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(raw, axis=1, keepdims=True)
    norm = np.where(norm < 1e-12, 1.0, norm)
    d = np.minimum(raw / norm, DESC_CLIP)
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    norm = np.where(norm < 1e-12, 1.0, norm)
    return (d / norm).astype(np.float32)


def match_keypoints(kps_a: FrameKeypoints, kps_b: FrameKeypoints, ratio: float = 0.75) -> MatchSet:
    """Mutual-best descriptor matches passing the ratio test in both directions."""
    n, m = kps_a.count, kps_b.count
    if n == 0 or m == 0:
        return MatchSet(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    da = kps_a.descriptors.astype(np.float64)
    db = kps_b.descriptors.astype(np.float64)
    d2 = np.maximum(
        (da * da).sum(axis=1)[:, None] + (db * db).sum(axis=1)[None, :] - 2.0 * (da @ db.T),
        0.0,
    )
    best_b = d2.argmin(axis=1)
    best_a = d2.argmin(axis=0)

    ia = np.arange(n)
    mutual = best_a[best_b] == ia
    r2 = ratio * ratio
    if m >= 2:
        part = np.partition(d2, 1, axis=1)
        ok_rows = (part[:, 1] > 0) & (part[:, 0] < r2 * part[:, 1])
    else:
        ok_rows = np.ones(n, dtype=bool)
    if n >= 2:
        part = np.partition(d2, 1, axis=0)
        ok_cols = (part[1] > 0) & (part[0] < r2 * part[1])
    else:
        ok_cols = np.ones(m, dtype=bool)
    sel = mutual & ok_rows & ok_cols[best_b]
    idx_a = ia[sel]
    idx_b = best_b[sel]
    dist = np.sqrt(d2[idx_a, idx_b])
    return MatchSet(idx_a.astype(np.int64), idx_b.astype(np.int64), dist)
