import numpy as np
import pytest

from retroquery.background import BackgroundEstimate
from retroquery.blobs import Blob
from retroquery.config import EngineConfig
from retroquery.detectors import Detection, OracleDetector, filter_by_label
from retroquery.frames import Chunk
from retroquery.index_store import ChunkRecords
from retroquery.query import (
    ChunkView,
    QuerySpec,
    RepFramePlan,
    calibrate_max_distance,
    compute_anchor_ratios,
    pair_detections,
    place_box,
    placement_objective,
    run_chunk,
    select_rep_frames,
)
from retroquery.trajectories import Chain


def make_view(n_frames, trajs, chains=(), chunk_id=0):
    """Hand-built chunk view. trajs: {tid: [(pos, box), ...]};
    chains: [(tid, [(pos, x, y), ...]), ...]."""
    blobs = {}
    for tid, entries in trajs.items():
        for pos, box in entries:
            blobs.setdefault(pos, []).append(
                Blob(pos, box, (box[2] - box[0] + 1) * (box[3] - box[1] + 1), tid)
            )
    chain_objs = [Chain([(p, float(x), float(y), tid) for p, x, y in pts]) for tid, pts in chains]
    bg = BackgroundEstimate(np.full((1, 4), 52.0, dtype=np.float32), (2, 2), 1, (120, 160))
    rec = ChunkRecords(Chunk(chunk_id, 0, n_frames - 1), blobs, chain_objs, np.zeros(9), bg)
    return ChunkView(rec)


CFG = EngineConfig(chunk_frames=60)


# --- pairing -------------------------------------------------------------


def test_pairing_exact_box():
    blobs = [Blob(0, (10, 10, 30, 30), 400, 5)]
    det = Detection(0, (10.0, 10.0, 30.0, 30.0), "car", 1.0)
    pairing = pair_detections([det], blobs, 0)
    assert pairing.by_traj == {5: [det]}
    assert pairing.statics == []


def test_pairing_argmax_intersection():
    blobs = [
        Blob(0, (0, 0, 10, 10), 100, 1),   # intersection 30
        Blob(0, (5, 0, 20, 10), 150, 2),   # intersection 70
    ]
    det = Detection(0, (3.0, 0.0, 13.0, 10.0), "car", 1.0)
    pairing = pair_detections([det], blobs, 0)
    assert list(pairing.by_traj) == [2]


def test_pairing_no_blob_is_static():
    det = Detection(0, (50.0, 50.0, 60.0, 60.0), "car", 1.0)
    pairing = pair_detections([det], [Blob(0, (0, 0, 10, 10), 100, 1)], 0)
    assert pairing.statics == [det]
    assert pairing.by_traj == {}


# --- anchor ratios (Eq.-style) --------------------------------------------


def test_anchor_ratio_center():
    r = compute_anchor_ratios((0, 0, 10, 10), np.array([[5.0, 5.0]]), [0])
    assert r.ratios[0] == pytest.approx([0.5, 0.5])


def test_anchor_ratio_corners():
    r = compute_anchor_ratios((2, 3, 12, 13), np.array([[2.0, 3.0], [12.0, 13.0]]), [0, 1])
    assert r.ratios[0] == pytest.approx([1.0, 1.0])
    assert r.ratios[1] == pytest.approx([0.0, 0.0])


def test_anchor_ratio_example_values():
    r = compute_anchor_ratios((10, 20, 50, 60), np.array([[20.0, 30.0]]), [0])
    assert r.ratios[0] == pytest.approx([0.75, 0.75])


# --- box placement ----------------------------------------------------------


def _random_anchors(rng, n=6):
    x1, y1 = rng.uniform(5, 40, 2)
    w, h = rng.uniform(15, 40, 2)
    box = (x1, y1, x1 + w, y1 + h)
    pts = np.column_stack(
        [rng.uniform(box[0], box[2], n), rng.uniform(box[1], box[3], n)]
    )
    return box, pts


def test_place_box_translation_exact():
    rng = np.random.default_rng(1)
    box, pts = _random_anchors(rng)
    anchors = compute_anchor_ratios(box, pts, list(range(len(pts))))
    shifted = pts + np.array([3.0, -2.0])
    placed, obj, mode = place_box(anchors, shifted)
    expected = (box[0] + 3, box[1] - 2, box[2] + 3, box[3] - 2)
    assert placed == pytest.approx(expected, abs=1e-6)
    assert obj < 1e-9
    assert mode == "ratio-fit"


def test_place_box_scaling_about_top_left_exact():
    rng = np.random.default_rng(2)
    box, pts = _random_anchors(rng)
    anchors = compute_anchor_ratios(box, pts, list(range(len(pts))))
    origin = np.array([box[0], box[1]])
    scaled = origin + (pts - origin) * 2.0
    placed, obj, _ = place_box(anchors, scaled)
    expected = (box[0], box[1], box[0] + 2 * (box[2] - box[0]), box[1] + 2 * (box[3] - box[1]))
    assert placed == pytest.approx(expected, abs=1e-6)
    assert obj < 1e-9


def test_place_box_single_point_translation_fallback():
    box = (10.0, 10.0, 30.0, 25.0)
    anchors = compute_anchor_ratios(box, np.array([[15.0, 12.0]]), [0])
    placed, _obj, mode = place_box(anchors, np.array([[18.0, 14.0]]))
    assert mode == "translation"
    assert placed == pytest.approx((13.0, 12.0, 33.0, 27.0))


def test_place_box_grid_search_oracle():
    """The closed-form solution attains the global minimum (25 instances)."""
    rng = np.random.default_rng(42)
    for trial in range(25):
        box, pts = _random_anchors(rng, n=int(rng.integers(3, 9)))
        anchors = compute_anchor_ratios(box, pts, list(range(len(pts))))
        # random affine move: translation + independent axis scalings + noise
        s = rng.uniform(0.6, 1.7, 2)
        t = rng.uniform(-10, 10, 2)
        target = (pts - pts.mean(axis=0)) * s + pts.mean(axis=0) + t
        target += rng.normal(0, 0.3, target.shape)
        placed, obj, _ = place_box(anchors, target)
        # the objective is separable; scan each axis on a dense grid
        best = _grid_best(anchors.ratios, target, placed)
        assert obj <= best + 1e-6, f"trial {trial}: solver {obj} vs grid {best}"


def _grid_best(ratios, pts, around):
    x1, y1, x2, y2 = around
    best_x = _axis_grid(ratios[:, 0], pts[:, 0], x1, x2)
    best_y = _axis_grid(ratios[:, 1], pts[:, 1], y1, y2)
    return best_x + best_y


def _axis_grid(a, p, lo, hi):
    centers = np.linspace((lo + hi) / 2 - 12, (lo + hi) / 2 + 12, 97)
    sizes = np.linspace(max(0.5, (hi - lo) * 0.4), (hi - lo) * 2.0 + 8, 97)
    c, s = np.meshgrid(centers, sizes)
    h2 = c + s / 2
    vals = ((h2[..., None] - p[None, None, :]) / s[..., None] - a[None, None, :]) ** 2
    return float(vals.sum(axis=-1).min())


def test_place_box_clips_to_frame():
    box = (0.0, 0.0, 20.0, 20.0)
    pts = np.array([[2.0, 2.0], [18.0, 18.0], [10.0, 4.0]])
    anchors = compute_anchor_ratios(box, pts, [0, 1, 2])
    placed, _, _ = place_box(anchors, pts - 15.0, frame_shape=(50, 50))
    assert placed[0] >= 0 and placed[1] >= 0


def test_objective_matches_direct_formula():
    box = (5.0, 6.0, 25.0, 30.0)
    pts = np.array([[10.0, 10.0], [20.0, 25.0]])
    ratios = compute_anchor_ratios(box, pts, [0, 1]).ratios
    val = placement_objective(box, ratios, pts)
    assert val == pytest.approx(0.0, abs=1e-12)


# --- representative frame selection ---------------------------------------


def test_rep_frames_distance_zero_selects_every_blob_frame():
    trajs = {0: [(p, (10, 10, 20, 20)) for p in range(0, 10)],
             1: [(p, (40, 40, 50, 50)) for p in range(4, 8)]}
    view = make_view(12, trajs)
    plan = select_rep_frames(view, 0)
    assert plan.frames == list(range(0, 10))


def test_rep_frames_empty_chunk_middle_frame():
    view = make_view(60, {})
    plan = select_rep_frames(view, 30)
    assert plan.frames == [29]


def test_rep_frames_long_trajectory_small_cover():
    trajs = {0: [(p, (10, 10, 20, 20)) for p in range(0, 101)]}
    view = make_view(101, trajs)
    plan = select_rep_frames(view, 30)
    assert len(plan.frames) <= 2
    for p, _ in trajs[0]:
        assert any(abs(p - g) <= 30 for g in plan.frames)


def test_rep_frames_plan_validity_property():
    trajs = {
        0: [(p, (10, 10, 20, 20)) for p in range(0, 40)],
        1: [(p, (40, 40, 50, 50)) for p in range(10, 55)],
        2: [(33, (70, 70, 80, 80))],
    }
    view = make_view(60, trajs)
    for md in (0, 2, 8, 30):
        plan = select_rep_frames(view, md)
        for tid, entries in trajs.items():
            frames_of_t = [p for p, _ in entries]
            for p in frames_of_t:
                assert any(abs(p - g) <= md and g in frames_of_t for g in plan.frames)


from hypothesis import given, settings
from hypothesis import strategies as st


@given(
    st.lists(
        st.tuples(st.integers(0, 49), st.integers(1, 40)),  # (start, length)
        min_size=1,
        max_size=6,
    ),
    st.sampled_from([0, 1, 3, 7, 15]),
)
@settings(max_examples=40, deadline=None)
def test_rep_frames_cover_random_layouts(spans, md):
    trajs = {}
    for tid, (start, length) in enumerate(spans):
        end = min(start + length, 59)
        trajs[tid] = [(p, (10 + tid, 10, 30 + tid, 30)) for p in range(start, end + 1)]
    view = make_view(60, trajs)
    plan = select_rep_frames(view, md)
    assert plan.frames == sorted(set(plan.frames))
    for tid, entries in trajs.items():
        frames_of_t = {p for p, _ in entries}
        for p in frames_of_t:
            assert any(g in frames_of_t and abs(p - g) <= md for g in plan.frames)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_place_box_never_beats_grid_and_never_degenerates(seed):
    rng = np.random.default_rng(seed)
    x1, y1 = rng.uniform(0, 50, 2)
    w, h = rng.uniform(5, 60, 2)
    box = (x1, y1, x1 + w, y1 + h)
    n = int(rng.integers(2, 10))
    pts = np.column_stack([rng.uniform(box[0], box[2], n), rng.uniform(box[1], box[3], n)])
    anchors = compute_anchor_ratios(box, pts, list(range(n)))
    target = pts * rng.uniform(0.5, 2.0) + rng.uniform(-20, 20, 2) + rng.normal(0, 1.0, pts.shape)
    placed = place_box(anchors, target, frame_shape=(200, 200))
    assert placed is not None
    (bx1, by1, bx2, by2), obj, _mode = placed
    assert bx2 > bx1 and by2 > by1
    assert obj >= 0.0
    assert 0 <= bx1 <= 199 and 0 <= by2 <= 199


def test_rep_frames_monotone_in_max_distance(small_index):
    from retroquery.index_store import read_chunk_index

    view = ChunkView(read_chunk_index(small_index["dir"], small_index["manifest"], 1))
    sizes = []
    for md in (0, 1, 2, 4, 8, 15, 30, 60):
        sizes.append(len(select_rep_frames(view, md).frames))
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


# --- count propagation -------------------------------------------------------


def _count_query():
    return QuerySpec("counting", "car", 0.9)


def test_counts_single_rep_covers_all_frames():
    trajs = {0: [(p, (10, 10, 30, 30)) for p in range(60)]}
    view = make_view(60, trajs)
    dets = [
        Detection(30, (10.0, 10.0, 20.0, 20.0), "car", 1.0),
        Detection(30, (20.0, 12.0, 30.0, 22.0), "car", 1.0),
    ]
    plan = RepFramePlan(0, 900, [30])
    payload, prov = run_chunk(view, plan, {30: dets}, _count_query(), CFG, (120, 160))
    assert all(payload[p] == 2 for p in range(60))
    assert prov[30] == "detector-direct"
    assert prov[0] == "propagated"


def test_counts_two_reps_partition_at_nearest():
    trajs = {0: [(p, (10, 10, 30, 30)) for p in range(60)]}
    view = make_view(60, trajs)
    d1 = Detection(10, (10.0, 10.0, 20.0, 20.0), "car", 1.0)
    d2a = Detection(50, (10.0, 10.0, 20.0, 20.0), "car", 1.0)
    d2b = Detection(50, (21.0, 10.0, 29.0, 20.0), "car", 1.0)
    plan = RepFramePlan(0, 900, [10, 50])
    payload, _ = run_chunk(view, plan, {10: [d1], 50: [d2a, d2b]}, _count_query(), CFG, (120, 160))
    for p in range(60):
        if p in (10, 50):
            continue
        assert payload[p] == (1 if p <= 30 else 2), p  # tie at 30 goes to the earlier rep


def test_counts_empty_chunk_zero_and_false():
    view = make_view(60, {})
    plan = RepFramePlan(0, 900, [29])
    payload, _ = run_chunk(view, plan, {29: []}, _count_query(), CFG, (120, 160))
    assert all(v == 0 for v in payload.values())
    q = QuerySpec("binary_classification", "car", 0.9)
    payload, _ = run_chunk(view, plan, {29: []}, q, CFG, (120, 160))
    assert all(v is False for v in payload.values())


def test_spurious_trajectory_discarded():
    trajs = {0: [(p, (10, 10, 30, 30)) for p in range(60)]}
    view = make_view(60, trajs)
    plan = RepFramePlan(0, 900, [30])
    payload, _ = run_chunk(view, plan, {30: []}, _count_query(), CFG, (120, 160))
    assert all(v == 0 for v in payload.values())


def test_static_broadcast_until_next_rep():
    view = make_view(60, {})
    plan = RepFramePlan(0, 900, [10, 40])
    static = Detection(10, (50.0, 50.0, 60.0, 60.0), "car", 1.0)
    q = QuerySpec("detection", "car", 0.9)
    payload, prov = run_chunk(view, plan, {10: [static], 40: []}, q, CFG, (120, 160))
    assert payload[10] == [(static.box, 1.0)]
    for p in range(11, 40):
        assert payload[p] == [(static.box, 1.0)]
        assert prov[p] == "static-broadcast"
    for p in range(41, 60):
        assert payload[p] == []
    # frames before the first rep fall back to it
    for p in range(0, 10):
        assert payload[p] == [(static.box, 1.0)]


def test_detection_nearest_rep_zero_pairing_wins():
    """If the nearest covering rep paired nothing to a trajectory, the
    segment carries no box for it; farther reps do not override."""
    trajs = {7: [(p, (10, 10, 30, 30)) for p in range(60)]}
    chains = [(7, [(p, 15.0, 15.0) for p in range(60)]),
              (7, [(p, 25.0, 25.0) for p in range(60)]),
              (7, [(p, 20.0, 28.0) for p in range(60)])]
    view = make_view(60, trajs, chains)
    det = Detection(10, (10.0, 10.0, 30.0, 30.0), "car", 1.0)
    plan = RepFramePlan(0, 900, [10, 50])
    q = QuerySpec("detection", "car", 0.9)
    # paired at rep 10, nothing at rep 50
    payload, _ = run_chunk(view, plan, {10: [det], 50: []}, q, CFG, (120, 160))
    assert payload[20], "frames nearest rep 10 carry the box"
    assert payload[45] == [], "frames nearest rep 50 carry its (empty) result"


def test_detection_chain_gap_falls_back_to_farther_rep():
    """When every anchor chain from the nearest rep dies before the target
    frame, the next-nearest rep covers it."""
    trajs = {3: [(p, (10, 10, 30, 30)) for p in range(60)]}
    # chains from rep 50 stop at frame 35: frames below 35 are unreachable
    chains = [(3, [(p, 15.0, 15.0) for p in range(35, 60)]),
              (3, [(p, 25.0, 25.0) for p in range(35, 60)]),
              (3, [(p, 12.0, 28.0) for p in range(0, 36)])]
    view = make_view(60, trajs, chains)
    d10 = Detection(10, (10.0, 10.0, 30.0, 30.0), "car", 0.7)
    d50 = Detection(50, (10.0, 10.0, 30.0, 30.0), "car", 0.9)
    plan = RepFramePlan(0, 900, [10, 50])
    q = QuerySpec("detection", "car", 0.9)
    payload, _ = run_chunk(view, plan, {10: [d10], 50: [d50]}, q, CFG, (120, 160))
    # frame 34 is nearer to 50, but 50's chains don't reach it: rep 10 covers
    assert payload[34] and payload[34][0][1] == 0.7
    assert payload[45] and payload[45][0][1] == 0.9


def test_classification_equals_count_positive(small_index):
    from retroquery.clustering import ClusterAssignment
    from retroquery.query import execute_query

    man = small_index["manifest"]
    assign = ClusterAssignment.from_dict(man.clustering)
    det1 = OracleDetector(small_index["scene"])
    det2 = OracleDetector(small_index["scene"])
    cfg = small_index["cfg"]
    counts = execute_query(
        small_index["dir"], man, assign, QuerySpec("counting", "car", 0.9), det1, cfg
    )
    flags = execute_query(
        small_index["dir"], man, assign,
        QuerySpec("binary_classification", "car", 0.9), det2, cfg,
    )
    for f in counts.frames:
        assert flags.payload[f] == (counts.payload[f] > 0)


# --- calibration --------------------------------------------------------------


def test_calibration_zero_distance_perfect_on_blob_frames():
    trajs = {0: [(p, (10, 10, 30, 30)) for p in range(60)]}
    chains = [(0, [(p, 15.0 + p, 15.0) for p in range(60)])]
    view = make_view(60, trajs, chains)
    full = {
        p: [Detection(p, (10.0 + p, 10.0, 30.0 + p, 30.0), "car", 1.0)] for p in range(60)
    }
    q = QuerySpec("detection", "car", 1.0)
    cfg = CFG.replace(max_distance_grid=(0,))
    md, acc, _ = calibrate_max_distance(view, full, q, cfg, (120, 160))
    assert md == 0
    assert acc == pytest.approx(1.0)


def test_calibration_static_scene_selects_largest():
    view = make_view(60, {})
    full = {p: [] for p in range(60)}
    q = QuerySpec("counting", "car", 0.95)
    md, acc, log = calibrate_max_distance(view, full, q, CFG, (120, 160))
    assert md == max(CFG.max_distance_grid)
    assert acc == 1.0
    assert len(log) == 1  # early exit on the first (largest) candidate


def test_calibration_safety_on_centroid(small_index):
    """The returned max_distance always meets the target on the chunk it
    was calibrated on."""
    from retroquery.index_store import read_chunk_index

    man = small_index["manifest"]
    det = OracleDetector(small_index["scene"])
    centroid = man.clustering["centroid_chunks"][0]
    view = ChunkView(read_chunk_index(small_index["dir"], man, centroid))
    full = {
        pos: filter_by_label(det.detect(man.frame_of(pos)), "car") for pos in view.positions()
    }
    for target in (0.8, 0.9, 0.95):
        q = QuerySpec("detection", "car", target)
        md, acc, log = calibrate_max_distance(view, full, q, small_index["cfg"], (120, 160))
        assert acc >= target
        assert (md, acc) == log[-1]


@pytest.fixture(scope="module")
def decay_chunk_view():
    from retroquery import scenes
    from retroquery.synth import SyntheticScene
    from test_trajectories import build_work
    from conftest import records_from_work

    scene = scenes.decay()
    one_chunk = SyntheticScene(
        seed=scene.seed, width=scene.width, height=scene.height,
        duration_frames=180, fps=scene.fps, background_value=scene.background_value,
        actors=scene.actors[:1],
    )
    _, work = build_work(one_chunk)
    return one_chunk, ChunkView(records_from_work(work))


def test_injected_inconsistency_shrinks_max_distance(decay_chunk_view):
    """A noisier detector forces a tighter propagation bound at the same target."""
    from retroquery.detectors import InconsistentOracleDetector

    scene, view = decay_chunk_view
    q = QuerySpec("detection", "person", 0.90)
    clean = OracleDetector(scene)
    noisy = InconsistentOracleDetector(
        scene, seed=3, dropout_base=0.6, dropout_area_scale=600.0, jitter_sigma=1.5
    )
    results = {}
    for name, det in (("clean", clean), ("noisy", noisy)):
        full = {p: filter_by_label(det.detect(p), "person") for p in range(180)}
        md, _, _ = calibrate_max_distance(view, full, q, CFG, (120, 160))
        results[name] = md
    assert results["noisy"] < results["clean"], results


def test_empty_scene_inference_cost_is_one_frame_per_chunk(tmp_path):
    """With nothing moving, the detector runs on the centroid chunk plus one
    representative frame in every other chunk."""
    from retroquery.clustering import ClusterAssignment
    from retroquery.pipeline import SourceSpec, preprocess_video
    from retroquery.query import execute_query
    from retroquery.synth import SyntheticScene

    scene = SyntheticScene(seed=2, width=64, height=48, duration_frames=120, fps=2)
    cfg = EngineConfig(chunk_frames=40)
    man, _ = preprocess_video(SourceSpec("scene", scene=scene), tmp_path / "idx", cfg, "empty")
    det = OracleDetector(scene)
    res = execute_query(
        tmp_path / "idx", man, ClusterAssignment.from_dict(man.clustering),
        QuerySpec("counting", "car", 0.9, det.detector_id), det, cfg,
    )
    n_chunks = len(man.chunks)
    assert res.invocations == 40 + (n_chunks - 1)
    assert all(v == 0 for v in res.payload.values())
