"""Per-chunk conservative background estimation.

Each pixel (or region) gets a histogram of quantized intensities over the
chunk. Unimodal pixels adopt their peak as background. Multi-modal pixels
are re-examined over progressively longer windows (chunk+next, then
prev+chunk+next): peaks whose relative mass keeps growing across the
extensions pertain to the background; anything ambiguous stays EMPTY and is
treated as foreground downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import FrameStream


@dataclass
class PixelHistogram:
    """Quantized intensity counts per region over a frame window."""

    counts: np.ndarray  # (nbins, n_regions) int64
    value_sums: np.ndarray  # (nbins, n_regions) float64
    window_frames: int
    grid: tuple[int, int]  # region grid (rows, cols)
    region_size: int
    bin_width: int

    def merged(self, *others: "PixelHistogram") -> "PixelHistogram":
        counts = self.counts.copy()
        sums = self.value_sums.copy()
        window = self.window_frames
        for o in others:
            counts += o.counts
            sums += o.value_sums
            window += o.window_frames
        return PixelHistogram(counts, sums, window, self.grid, self.region_size, self.bin_width)


@dataclass
class BackgroundEstimate:
    """Per-region background values; a region with no values is EMPTY.

    values has shape (max_peaks, n_regions); unused slots are -1.
    """

    values: np.ndarray  # float32
    grid: tuple[int, int]
    region_size: int
    frame_shape: tuple[int, int]

    def empty_mask(self) -> np.ndarray:
        return (self.values < 0).all(axis=0).reshape(self.grid)

    def pixel_values(self) -> np.ndarray:
        """Expand region values to full frame resolution: (max_peaks, H, W)."""
        k = self.values.shape[0]
        h, w = self.frame_shape
        grid = self.values.reshape(k, *self.grid)
        if self.region_size == 1:
            return grid
        rep = np.repeat(np.repeat(grid, self.region_size, axis=1), self.region_size, axis=2)
        return rep[:, :h, :w]


def build_histograms(
    stream: FrameStream,
    positions: range,
    region_size: int = 1,
    bin_width: int = 8,
) -> PixelHistogram:
    h, w = stream.height, stream.width
    gr = (h + region_size - 1) // region_size
    gc = (w + region_size - 1) // region_size
    n = gr * gc
    nbins = 256 // bin_width
    counts = np.zeros(nbins * n, dtype=np.int64)
    sums = np.zeros(nbins * n, dtype=np.float64)
    base = np.arange(n, dtype=np.int64)
    for p in positions:
        px = stream.read_position(p).pixels
        vals = _region_values(px, region_size, gr, gc) if region_size > 1 else px.astype(np.float64)
        bins = (vals.astype(np.int64) // bin_width).ravel()
        idx = bins * n + base
        counts += np.bincount(idx, minlength=nbins * n)
        sums += np.bincount(idx, weights=vals.ravel(), minlength=nbins * n)
    return PixelHistogram(
        counts.reshape(nbins, n),
        sums.reshape(nbins, n),
        len(positions),
        (gr, gc),
        region_size,
        bin_width,
    )


def _region_values(px: np.ndarray, rs: int, gr: int, gc: int) -> np.ndarray:
    h, w = px.shape
    row_idx = np.arange(0, h, rs)
    col_idx = np.arange(0, w, rs)
    sums = np.add.reduceat(np.add.reduceat(px.astype(np.float64), row_idx, axis=0), col_idx, axis=1)
    rows = np.minimum(rs, h - row_idx)[:, None]
    cols = np.minimum(rs, w - col_idx)[None, :]
    return sums / (rows * cols)


def peak_mask(counts: np.ndarray, window: int, peak_fraction: float) -> np.ndarray:
    """Boolean (nbins, n) mask of local maxima carrying enough mass.

    A plateau counts once, at its leftmost bin (strictly greater than the
    left neighbor, >= the right neighbor).
    """
    nbins = counts.shape[0]
    left = np.vstack([np.zeros((1,) + counts.shape[1:], dtype=counts.dtype), counts[:-1]])
    right = np.vstack([counts[1:], np.zeros((1,) + counts.shape[1:], dtype=counts.dtype)])
    mass_ok = counts >= peak_fraction * window
    return (counts > left) & (counts >= right) & (counts > 0) & mass_ok


def detect_peaks(hist: PixelHistogram, peak_fraction: float, region: int = 0) -> list[tuple[int, float, float]]:
    """Peaks of one region's histogram: (bin, mass_fraction, mean_value), mass-descending."""
    counts = hist.counts[:, region]
    mask = peak_mask(counts[:, None], hist.window_frames, peak_fraction)[:, 0]
    out = []
    for b in np.nonzero(mask)[0]:
        mass = counts[b] / hist.window_frames
        value = hist.value_sums[b, region] / counts[b]
        out.append((int(b), float(mass), float(value)))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


def resolve_background(
    chunk_hist: PixelHistogram,
    next_hist: PixelHistogram | None,
    prev_hist: PixelHistogram | None,
    peak_fraction: float,
    peak_bin_drift: int = 1,
    frame_shape: tuple[int, int] | None = None,
    keep_trace: bool = False,
) -> BackgroundEstimate | tuple[BackgroundEstimate, dict]:
    """Resolve per-region background values from the chunk and its neighbors."""
    counts = chunk_hist.counts
    nbins, n = counts.shape
    window = chunk_hist.window_frames
    peaks = peak_mask(counts, window, peak_fraction)
    n_peaks = peaks.sum(axis=0)

    max_slots = max(1, int(n_peaks.max(initial=1)))
    values = np.full((max_slots, n), -1.0, dtype=np.float32)

    # unimodal regions: adopt the single peak
    uni = n_peaks == 1
    if uni.any():
        bins = peaks[:, uni].argmax(axis=0)
        cols = np.nonzero(uni)[0]
        values[0, cols] = (
            chunk_hist.value_sums[bins, cols] / counts[bins, cols]
        ).astype(np.float32)

    trace: dict[int, list] = {}
    multi_cols = np.nonzero(n_peaks >= 2)[0]
    if multi_cols.size:
        ext = chunk_hist.merged(next_hist) if next_hist is not None else None
        full = (
            chunk_hist.merged(next_hist, prev_hist)
            if (next_hist is not None and prev_hist is not None)
            else None
        )
        for col in multi_cols:
            resolved = _resolve_multimodal(
                chunk_hist, ext, full, int(col), peaks[:, col], peak_fraction, peak_bin_drift,
                trace if keep_trace else None,
            )
            for slot, val in enumerate(resolved):
                values[slot, col] = val

    est = BackgroundEstimate(
        values,
        chunk_hist.grid,
        chunk_hist.region_size,
        frame_shape or (chunk_hist.grid[0] * chunk_hist.region_size, chunk_hist.grid[1] * chunk_hist.region_size),
    )
    return (est, trace) if keep_trace else est


def _rel_mass(hist: PixelHistogram, col: int, b: int, drift: int) -> float:
    lo, hi = max(0, b - drift), min(hist.counts.shape[0], b + drift + 1)
    return float(hist.counts[lo:hi, col].max()) / hist.window_frames


def _resolve_multimodal(
    chunk_hist: PixelHistogram,
    ext: PixelHistogram | None,
    full: PixelHistogram | None,
    col: int,
    peaks_col: np.ndarray,
    peak_fraction: float,
    drift: int,
    trace: dict | None,
) -> list[float]:
    """Window-extension decision for one multi-modal region.

    Peaks persisting (relative mass nondecreasing) in the chunk+next window
    are background candidates. Two or more survivors mean genuine background
    motion; exactly one means the distribution collapsed toward one peak, so
    the prev+chunk+next window must confirm it keeps rising. Anything else
    is EMPTY.
    """
    if ext is None:
        return []
    eps = 1e-9
    bins = np.nonzero(peaks_col)[0]
    survivors = []
    for b in bins:
        m_chunk = chunk_hist.counts[b, col] / chunk_hist.window_frames
        m_ext = _rel_mass(ext, col, int(b), drift)
        if trace is not None:
            trace.setdefault(col, []).append(("ext", int(b), m_chunk, m_ext))
        if m_ext >= m_chunk - eps:
            value = chunk_hist.value_sums[b, col] / chunk_hist.counts[b, col]
            survivors.append((int(b), m_ext, float(value)))
    if len(survivors) >= 2:
        return [v for _, _, v in survivors]
    if len(survivors) == 1:
        if full is None:
            return []
        b, m_ext, value = survivors[0]
        m_full = _rel_mass(full, col, b, drift)
        if trace is not None:
            trace.setdefault(col, []).append(("full", b, m_ext, m_full))
        if m_full >= m_ext - eps:
            return [value]
    return []
