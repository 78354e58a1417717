"""Foreground segmentation against the background estimate, and blob extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .background import BackgroundEstimate


@dataclass
class Blob:
    frame_index: int
    box: tuple[int, int, int, int]  # inclusive pixel corners
    pixel_area: int
    trajectory_id: int = -1


def segment(frame: np.ndarray, bg: BackgroundEstimate, tolerance: float) -> np.ndarray:
    """Binary foreground mask: 1 where no background value is within tolerance.

    Tolerance is a fraction of the full 0-255 range; EMPTY-background pixels
    are always foreground.
    """
    values = _cached_pixel_values(bg)
    thr = tolerance * 255.0
    px = frame.astype(np.float32)
    is_bg = np.zeros(frame.shape, dtype=bool)
    for layer in values:
        is_bg |= (layer >= 0) & (np.abs(px - layer) <= thr)
    return (~is_bg).astype(np.uint8)


def _cached_pixel_values(bg: BackgroundEstimate) -> np.ndarray:
    cached = getattr(bg, "_px_cache", None)
    if cached is None:
        cached = bg.pixel_values()
        bg._px_cache = cached  # type: ignore[attr-defined]
    return cached


def refine(mask: np.ndarray, open_radius: int, close_radius: int) -> np.ndarray:
    """Morphological opening (speckle removal) then closing (pinhole fill)."""
    out = mask
    if open_radius > 0:
        out = kernels.dilate(kernels.erode(out, open_radius), open_radius)
    if close_radius > 0:
        out = kernels.erode(kernels.dilate(out, close_radius), close_radius)
    return out


def extract_blobs(
    mask: np.ndarray, frame_index: int, min_blob_area: int
) -> tuple[list[Blob], np.ndarray]:
    """8-connected components over the mask, sorted by (y1, x1).

    Returns the blobs plus a label raster aligned with the returned order
    (pixel label i+1 belongs to blobs[i]); undersized components are erased.
    """
    labels, n = kernels.label_components(np.ascontiguousarray(mask, dtype=np.uint8))
    if n == 0:
        return [], labels
    ys, xs = np.nonzero(labels)
    ls = labels[ys, xs]
    areas = np.bincount(ls, minlength=n + 1)
    x1 = np.full(n + 1, 1 << 30, dtype=np.int64)
    y1 = np.full(n + 1, 1 << 30, dtype=np.int64)
    x2 = np.full(n + 1, -1, dtype=np.int64)
    y2 = np.full(n + 1, -1, dtype=np.int64)
    np.minimum.at(x1, ls, xs)
    np.minimum.at(y1, ls, ys)
    np.maximum.at(x2, ls, xs)
    np.maximum.at(y2, ls, ys)

    keep = [lab for lab in range(1, n + 1) if areas[lab] >= min_blob_area]
    keep.sort(key=lambda lab: (y1[lab], x1[lab], x2[lab], y2[lab]))
    remap = np.zeros(n + 1, dtype=np.int32)
    blobs = []
    for i, lab in enumerate(keep):
        remap[lab] = i + 1
        blobs.append(
            Blob(
                frame_index=frame_index,
                box=(int(x1[lab]), int(y1[lab]), int(x2[lab]), int(y2[lab])),
                pixel_area=int(areas[lab]),
            )
        )
    return blobs, remap[labels]
