import numpy as np
import pytest

from retroquery.background import (
    PixelHistogram,
    build_histograms,
    detect_peaks,
    peak_mask,
    resolve_background,
)
from retroquery.frames import FrameStream
from retroquery.synth import GroundTruth, SyntheticSource
from conftest import crossing_scene


class ArrayStream(FrameStream):
    def __init__(self, arrays, fps=30):
        self.arrays = [np.asarray(a, dtype=np.uint8) for a in arrays]
        self.height, self.width = self.arrays[0].shape
        super().__init__(list(range(len(self.arrays))), fps)

    def _load(self, frame_index):
        return self.arrays[frame_index]


def _hist_from_values(values, nbins=32, bin_width=8):
    """Single-pixel histogram from a list of intensity values."""
    counts = np.zeros((nbins, 1), dtype=np.int64)
    sums = np.zeros((nbins, 1), dtype=np.float64)
    for v in values:
        counts[v // bin_width, 0] += 1
        sums[v // bin_width, 0] += v
    return PixelHistogram(counts, sums, len(values), (1, 1), 1, bin_width)


def test_constant_pixel_single_bin():
    stream = ArrayStream([np.full((4, 4), 100, np.uint8)] * 60)
    hist = build_histograms(stream, range(60))
    assert hist.counts.sum() == 60 * 16
    col = hist.counts[:, 0]
    assert col[100 // 8] == 60
    assert (col > 0).sum() == 1


def test_alternating_pixel_two_bins():
    frames = [np.full((2, 2), 100 if i % 2 == 0 else 200, np.uint8) for i in range(60)]
    hist = build_histograms(ArrayStream(frames), range(60))
    col = hist.counts[:, 0]
    assert col[100 // 8] == 30 and col[200 // 8] == 30


def test_dominant_peak_with_transients():
    rng = np.random.default_rng(3)
    vals = [100] * 54 + list(rng.integers(0, 256, 6))
    hist = _hist_from_values(vals)
    peaks = detect_peaks(hist, peak_fraction=0.25)
    assert peaks and peaks[0][0] == 100 // 8
    # direct count oracle: the dominant bin carries at least 54/60 mass
    assert peaks[0][1] >= 54 / 60


def test_unimodal_single_peak():
    hist = _hist_from_values([100] * 60)
    assert len(detect_peaks(hist, 0.25)) == 1


def test_bimodal_two_peaks():
    hist = _hist_from_values([100] * 30 + [200] * 30)
    assert len(detect_peaks(hist, 0.25)) == 2


def test_uniform_noise_no_peaks_at_30_percent():
    rng = np.random.default_rng(5)
    hist = _hist_from_values(list(rng.integers(0, 256, 120)))
    assert detect_peaks(hist, 0.3) == []


def test_resolve_constant_background():
    hist = _hist_from_values([100] * 60)
    est = resolve_background(hist, None, None, 0.25)
    assert est.values[0, 0] == pytest.approx(100.0)


def test_temporarily_static_object_resolves_empty():
    # street for half the chunk, a car parks on the pixel for the rest and
    # stays parked through the next chunk; it was absent in the previous one
    chunk = _hist_from_values([100] * 30 + [200] * 30)
    nxt = _hist_from_values([200] * 60)
    prev = _hist_from_values([100] * 60)
    est = resolve_background(chunk, nxt, prev, 0.25)
    assert est.empty_mask()[0, 0]


def test_departing_object_keeps_street_background():
    chunk = _hist_from_values([100] * 30 + [200] * 30)
    nxt = _hist_from_values([100] * 60)  # car drove away
    prev = _hist_from_values([100] * 60)
    est = resolve_background(chunk, nxt, prev, 0.25)
    vals = est.values[:, 0]
    assert (vals >= 0).sum() == 1
    assert vals[0] == pytest.approx(100.0)


def test_swaying_content_keeps_both_peaks():
    osc = [100, 200] * 30
    chunk = _hist_from_values(osc)
    nxt = _hist_from_values(osc)
    est = resolve_background(chunk, nxt, None, 0.25)
    vals = sorted(v for v in est.values[:, 0] if v >= 0)
    assert vals == [pytest.approx(100.0), pytest.approx(200.0)]


def test_multimodal_without_next_neighbor_is_empty():
    chunk = _hist_from_values([100] * 30 + [200] * 30)
    est = resolve_background(chunk, None, _hist_from_values([100] * 60), 0.25)
    assert est.empty_mask()[0, 0]


def test_collapse_without_prev_neighbor_is_empty():
    chunk = _hist_from_values([100] * 30 + [200] * 30)
    nxt = _hist_from_values([200] * 60)
    est = resolve_background(chunk, nxt, None, 0.25)
    assert est.empty_mask()[0, 0]


def test_monotone_window_property_for_resolved_peaks():
    chunk = _hist_from_values([100] * 30 + [200] * 30)
    nxt = _hist_from_values([100] * 60)
    prev = _hist_from_values([100] * 60)
    est, trace = resolve_background(chunk, nxt, prev, 0.25, keep_trace=True)
    assert not est.empty_mask()[0, 0]
    for step in trace[0]:
        _, _bin, before, after = step
        if _bin == 100 // 8:
            assert after >= before - 1e-9


def test_determinism_same_frames_same_estimate():
    src = SyntheticSource(crossing_scene())
    h1 = build_histograms(src, range(60))
    h2 = build_histograms(src, range(60))
    e1 = resolve_background(h1, None, None, 0.25)
    e2 = resolve_background(h2, None, None, 0.25)
    assert np.array_equal(e1.values, e2.values)


def test_conservativeness_on_moving_actors():
    """No pixel covered by a moving actor adopts that actor's intensity."""
    scene = crossing_scene()
    src = SyntheticSource(scene)
    gt = GroundTruth(scene)
    hist = build_histograms(src, range(60))
    est = resolve_background(hist, None, None, 0.25)
    values = est.pixel_values()
    for t in range(0, 60, 5):
        frame = src.render(t)
        background = src.render(t, background_only=True)
        moving = frame != background
        ys, xs = np.nonzero(moving)
        for y, x in zip(ys[::17], xs[::17]):
            actor_value = float(frame[y, x])
            for layer in values:
                if layer[y, x] >= 0:
                    assert abs(layer[y, x] - actor_value) > 0.05 * 255


def test_region_size_reduces_grid():
    src = SyntheticSource(crossing_scene())
    hist = build_histograms(src, range(10), region_size=4)
    assert hist.grid == (30, 40)
    est = resolve_background(hist, None, None, 0.25, frame_shape=(120, 160))
    assert est.pixel_values().shape == (est.values.shape[0], 120, 160)
