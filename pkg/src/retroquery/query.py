"""Query execution: calibrate, select representative frames, propagate.

For each cluster of chunks the detector runs on every frame of the centroid
chunk; simulating propagation against those full results picks the largest
max_distance meeting the accuracy target. Each chunk is then covered by a
greedy set of representative frames satisfying that max_distance, the
detector runs on those frames only, and results flow outward:

- counts ride trajectories, segmented by the nearest representative frame;
- boxes are re-placed per frame by preserving each keypoint's anchor ratios
  (its relative position inside the detection box) via a closed-form
  least-squares fit, falling back to translation when underdetermined;
- detections with no blob are entirely static objects, broadcast forward
  until the next representative frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterAssignment
from .config import EngineConfig
from .detectors import Detection, Detector, filter_by_label
from .index_store import ChunkRecords, Manifest, read_chunk_index
from .metrics import binary_accuracy, count_accuracy, detection_accuracy

PROV_DIRECT = "detector-direct"
PROV_PROPAGATED = "propagated"
PROV_STATIC = "static-broadcast"


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class QuerySpec:
    query_type: str  # binary_classification | counting | detection
    target_label: str
    accuracy_target: float
    detector_id: str = ""
    frame_range: tuple[int, int] | None = None  # original frame indices, inclusive

    def __post_init__(self):
        if self.query_type not in ("binary_classification", "counting", "detection"):
            raise QueryError(f"unknown query type {self.query_type!r}")
        if not (0.0 < self.accuracy_target <= 1.0):
            raise QueryError(f"accuracy target {self.accuracy_target} outside (0, 1]")


@dataclass
class RepFramePlan:
    chunk_id: int
    max_distance: int
    frames: list[int]  # global stream positions, sorted


@dataclass
class AnchorRatioSet:
    """Anchor ratios of one (detection, blob) pair's keypoints: each ratio is
    the keypoint's position relative to the box's bottom-right corner, in
    box-size units, so it is invariant under translation and scaling."""

    ratios: np.ndarray  # (n, 2): (ax, ay) per keypoint
    src_box: tuple[float, float, float, float]
    chain_ids: list[int]


@dataclass
class QueryResult:
    query: QuerySpec
    frames: list[int]  # original frame indices covered
    payload: dict[int, object]  # frame -> bool | int | list[(box, score)]
    provenance: dict[int, str]
    per_cluster_max_distance: dict[int, int]
    invoked_fraction: float
    invocations: int


class ChunkView:
    """Chunk records plus the lookups propagation needs."""

    def __init__(self, records: ChunkRecords):
        self.chunk = records.chunk
        self.blobs_by_pos = records.blobs_by_pos
        self.chains = records.chains
        self.features = records.features
        self.traj_frames: dict[int, list[int]] = {}
        self.node_box: dict[tuple[int, int], tuple[int, int, int, int]] = {}
        for pos in sorted(records.blobs_by_pos):
            for b in records.blobs_by_pos[pos]:
                self.traj_frames.setdefault(b.trajectory_id, []).append(pos)
                self.node_box[(b.trajectory_id, pos)] = b.box
        self._chain_start = []
        for c in self.chains:
            positions = [e[0] for e in c.entries]
            if positions != list(range(positions[0], positions[0] + len(positions))):
                raise QueryError("chain positions not contiguous")
            self._chain_start.append(positions[0])

    def positions(self) -> range:
        return self.chunk.positions()

    def chain_entry(self, chain_id: int, pos: int):
        chain = self.chains[chain_id]
        start = self._chain_start[chain_id]
        if 0 <= pos - start < len(chain.entries):
            return chain.entries[pos - start]
        return None

    def chains_at(self, pos: int, traj: int) -> list[int]:
        out = []
        for ci in range(len(self.chains)):
            e = self.chain_entry(ci, pos)
            if e is not None and e[3] == traj:
                out.append(ci)
        return out


# --- representative frame selection -------------------------------------------


def select_rep_frames(view: ChunkView, max_distance: int) -> RepFramePlan:
    """Greedy cover: every blob must be within max_distance of a chosen frame
    containing its trajectory. Ties pick the earlier frame; a blob-free chunk
    still gets its middle frame so static objects are discovered."""
    chunk = view.chunk
    blob_ids: list[tuple[int, int]] = []  # (traj, pos)
    for t, frames in sorted(view.traj_frames.items()):
        for p in frames:
            blob_ids.append((t, p))
    if not blob_ids:
        mid = (chunk.start_pos + chunk.end_pos) // 2
        return RepFramePlan(chunk.chunk_id, max_distance, [mid])

    coverage: dict[int, set[int]] = {}
    index_of = {bp: i for i, bp in enumerate(blob_ids)}
    for t, frames in sorted(view.traj_frames.items()):
        fset = frames
        for g in fset:
            cov = coverage.setdefault(g, set())
            for p in fset:
                if abs(p - g) <= max_distance:
                    cov.add(index_of[(t, p)])

    uncovered = set(range(len(blob_ids)))
    chosen: list[int] = []
    candidates = sorted(coverage)
    while uncovered:
        best_g, best_gain = -1, -1
        for g in candidates:
            gain = len(coverage[g] & uncovered)
            if gain > best_gain:
                best_gain, best_g = gain, g
        if best_gain <= 0:
            break
        chosen.append(best_g)
        uncovered -= coverage[best_g]
    return RepFramePlan(chunk.chunk_id, max_distance, sorted(chosen))


# --- pairing -------------------------------------------------------------------


@dataclass
class Pairing:
    """Detections on one representative frame, split into trajectory-paired
    and entirely-static groups."""

    pos: int
    by_traj: dict[int, list[Detection]] = field(default_factory=dict)
    statics: list[Detection] = field(default_factory=list)


def _intersection_area(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    return iw * ih if (iw > 0 and ih > 0) else 0.0


def pair_detections(dets: list[Detection], blobs, pos: int) -> Pairing:
    """Pair each detection with its maximum non-zero-intersection blob."""
    pairing = Pairing(pos)
    for d in dets:
        best_traj, best_area = None, 0.0
        for b in blobs:
            area = _intersection_area(d.box, b.box)
            if area > best_area:
                best_area, best_traj = area, b.trajectory_id
        if best_traj is None:
            pairing.statics.append(d)
        else:
            pairing.by_traj.setdefault(best_traj, []).append(d)
    return pairing


# --- anchor ratios and box placement -------------------------------------------


def compute_anchor_ratios(det_box, kp_xy: np.ndarray, chain_ids: list[int]) -> AnchorRatioSet:
    x1, y1, x2, y2 = det_box
    if x2 <= x1 or y2 <= y1:
        raise QueryError(f"degenerate detection box {det_box}")
    ax = (x2 - kp_xy[:, 0]) / (x2 - x1)
    ay = (y2 - kp_xy[:, 1]) / (y2 - y1)
    return AnchorRatioSet(np.column_stack([ax, ay]), tuple(float(v) for v in det_box), chain_ids)


def placement_objective(box, ratios: np.ndarray, pts: np.ndarray) -> float:
    x1, y1, x2, y2 = box
    ax = (x2 - pts[:, 0]) / (x2 - x1)
    ay = (y2 - pts[:, 1]) / (y2 - y1)
    return float(((ax - ratios[:, 0]) ** 2).sum() + ((ay - ratios[:, 1]) ** 2).sum())


def _solve_axis(p: np.ndarray, a: np.ndarray, w0: float) -> tuple[float, float]:
    """Minimize sum(((hi - p_k)/w - a_k)^2) over (hi, w). Returns (hi, w).

    Substituting hi* = mean(p + a*w) turns the objective into a quadratic in
    1/w, giving w* = -Var(p)/Cov(p, a); degenerate geometry falls back to
    translation at the source width w0.
    """
    if len(p) < 2:
        return float(p[0] + a[0] * w0), w0
    var_p = float(np.var(p))
    cov = float(np.mean(p * a) - p.mean() * a.mean())
    if var_p < 1e-12 or cov >= -1e-12:
        return float(np.mean(p + a * w0)), w0
    w = -var_p / cov
    if w < 1e-6:
        return float(np.mean(p + a * w0)), w0
    return float(np.mean(p + a * w)), w


def place_box(
    anchors: AnchorRatioSet,
    pts: np.ndarray,
    frame_shape: tuple[int, int] | None = None,
    min_anchor_keypoints: int = 2,
) -> tuple[tuple[float, float, float, float], float, str] | None:
    """Box on the target frame that best preserves the anchor ratios.

    Returns (box, objective, mode) or None when no keypoints survived.
    """
    n = len(pts)
    if n == 0:
        return None
    sx1, sy1, sx2, sy2 = anchors.src_box
    w0, h0 = sx2 - sx1, sy2 - sy1
    if n < min_anchor_keypoints:
        src_x = sx2 - anchors.ratios[:, 0] * w0
        src_y = sy2 - anchors.ratios[:, 1] * h0
        dx = float(np.mean(pts[:, 0] - src_x))
        dy = float(np.mean(pts[:, 1] - src_y))
        box = (sx1 + dx, sy1 + dy, sx2 + dx, sy2 + dy)
        mode = "translation"
    else:
        x2, w = _solve_axis(pts[:, 0], anchors.ratios[:, 0], w0)
        y2, h = _solve_axis(pts[:, 1], anchors.ratios[:, 1], h0)
        box = (x2 - w, y2 - h, x2, y2)
        mode = "ratio-fit"
    obj = placement_objective(box, anchors.ratios, pts)
    if frame_shape is not None:
        fh, fw = frame_shape
        x1c = min(max(box[0], 0.0), fw - 1.0)
        y1c = min(max(box[1], 0.0), fh - 1.0)
        x2c = min(max(box[2], x1c + 1e-3), fw - 1.0)
        y2c = min(max(box[3], y1c + 1e-3), fh - 1.0)
        box = (x1c, y1c, max(x2c, x1c + 1e-3), max(y2c, y1c + 1e-3))
    return box, obj, mode


# --- per-chunk propagation -------------------------------------------------


def _nearest_rep(reps: list[int], pos: int) -> int | None:
    """Nearest representative frame; equidistant picks the earlier one."""
    best, best_d = None, None
    for r in reps:
        d = abs(r - pos)
        if best_d is None or d < best_d:
            best, best_d = r, d
    return best


def _static_source(plan_frames: list[int], pos: int) -> int | None:
    """Forward broadcast: the latest rep at or before pos; positions before
    the first rep fall back to the first rep."""
    if not plan_frames:
        return None
    src = None
    for r in plan_frames:
        if r <= pos:
            src = r
        else:
            break
    return src if src is not None else plan_frames[0]


def run_chunk(
    view: ChunkView,
    plan: RepFramePlan,
    dets_at: dict[int, list[Detection]],
    query: QuerySpec,
    cfg: EngineConfig,
    frame_shape: tuple[int, int],
) -> tuple[dict[int, object], dict[int, str]]:
    """Propagate detector results from the plan's frames across the chunk.

    dets_at maps each plan position to the detector's label-filtered output
    on that frame. Returns per-position payloads plus provenance tags.
    """
    pairings: dict[int, Pairing] = {}
    for pos in plan.frames:
        pairings[pos] = pair_detections(
            dets_at.get(pos, []), view.blobs_by_pos.get(pos, []), pos
        )

    reps_of_traj: dict[int, list[int]] = {}
    for t, frames in view.traj_frames.items():
        reps = [r for r in plan.frames if (t, r) in view.node_box]
        if reps and any(pairings[r].by_traj.get(t) for r in reps):
            reps_of_traj[t] = reps  # paired somewhere; otherwise spurious

    payload: dict[int, object] = {}
    provenance: dict[int, str] = {}
    plan_set = set(plan.frames)

    if query.query_type in ("binary_classification", "counting"):
        for pos in view.positions():
            count = 0
            used_traj = False
            if pos in plan_set:
                count = len(dets_at.get(pos, []))
                provenance[pos] = PROV_DIRECT
            else:
                for t, frames in view.traj_frames.items():
                    if t not in reps_of_traj or (t, pos) not in view.node_box:
                        continue
                    r = _nearest_rep(reps_of_traj[t], pos)
                    if r is not None:
                        count += len(pairings[r].by_traj.get(t, []))
                        used_traj = True
                src = _static_source(plan.frames, pos)
                n_static = len(pairings[src].statics) if src is not None else 0
                count += n_static
                provenance[pos] = (
                    PROV_PROPAGATED if used_traj or n_static == 0 else PROV_STATIC
                )
            payload[pos] = count > 0 if query.query_type == "binary_classification" else count
        return payload, provenance

    # detection query
    anchor_cache: dict[tuple[int, int, int], AnchorRatioSet | None] = {}
    for pos in view.positions():
        boxes: list[tuple[tuple[float, float, float, float], float]] = []
        if pos in plan_set:
            for d in dets_at.get(pos, []):
                boxes.append((d.box, d.score))
            provenance[pos] = PROV_DIRECT
            payload[pos] = boxes
            continue
        used_traj = False
        for t in sorted(view.traj_frames):
            if t not in reps_of_traj or (t, pos) not in view.node_box:
                continue
            reps_sorted = sorted(reps_of_traj[t], key=lambda r: (abs(r - pos), r))
            for r in reps_sorted:
                dets = pairings[r].by_traj.get(t, [])
                placed_any = False
                reachable = False
                for di, d in enumerate(dets):
                    anchors = _anchors_for(view, anchor_cache, t, r, di, d)
                    if anchors is None:
                        continue
                    pts, alive = _chain_points(view, anchors, pos)
                    if not len(pts):
                        continue
                    reachable = True
                    placed = place_box(
                        AnchorRatioSet(anchors.ratios[alive], anchors.src_box, []),
                        pts,
                        frame_shape,
                        cfg.min_anchor_keypoints,
                    )
                    if placed is not None:
                        boxes.append((placed[0], d.score))
                        placed_any = True
                        used_traj = True
                if not dets or placed_any or reachable:
                    # the nearest covering rep decides the segment's boxes
                    # (possibly none); farther reps only back up chain gaps
                    break
        src = _static_source(plan.frames, pos)
        n_static = 0
        if src is not None:
            for d in pairings[src].statics:
                boxes.append((d.box, d.score))
                n_static += 1
        payload[pos] = boxes
        provenance[pos] = PROV_PROPAGATED if used_traj or n_static == 0 else PROV_STATIC
    return payload, provenance


def _anchors_for(view, cache, t, r, di, d) -> AnchorRatioSet | None:
    key = (t, r, di)
    if key in cache:
        return cache[key]
    bx = view.node_box[(t, r)]
    region = (
        max(d.box[0], bx[0]),
        max(d.box[1], bx[1]),
        min(d.box[2], bx[2]),
        min(d.box[3], bx[3]),
    )
    xs, ys, cids = [], [], []
    for ci in view.chains_at(r, t):
        e = view.chain_entry(ci, r)
        if region[0] <= e[1] <= region[2] and region[1] <= e[2] <= region[3]:
            xs.append(e[1])
            ys.append(e[2])
            cids.append(ci)
    if not cids or d.box[2] <= d.box[0] or d.box[3] <= d.box[1]:
        cache[key] = None
        return None
    anchors = compute_anchor_ratios(d.box, np.column_stack([xs, ys]), cids)
    cache[key] = anchors
    return anchors


def _chain_points(view: ChunkView, anchors: AnchorRatioSet, pos: int):
    pts = []
    alive = []
    for i, ci in enumerate(anchors.chain_ids):
        e = view.chain_entry(ci, pos)
        if e is not None:
            pts.append((e[1], e[2]))
            alive.append(i)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2), np.asarray(alive, dtype=np.int64)


# --- calibration ----------------------------------------------------------------


def chunk_accuracy(
    query: QuerySpec,
    pred: dict[int, object],
    truth_dets: dict[int, list[Detection]],
    iou_threshold: float,
) -> float:
    if query.query_type == "binary_classification":
        truth = {p: len(v) > 0 for p, v in truth_dets.items()}
        return binary_accuracy(pred, truth).average  # type: ignore[arg-type]
    if query.query_type == "counting":
        truth = {p: len(v) for p, v in truth_dets.items()}
        return count_accuracy(pred, truth).average  # type: ignore[arg-type]
    truth_boxes = {p: [d.box for d in v] for p, v in truth_dets.items()}
    return detection_accuracy(pred, truth_boxes, iou_threshold).average  # type: ignore[arg-type]


def calibrate_max_distance(
    view: ChunkView,
    full_dets: dict[int, list[Detection]],
    query: QuerySpec,
    cfg: EngineConfig,
    frame_shape: tuple[int, int],
) -> tuple[int, float, list[tuple[int, float]]]:
    """Largest max_distance whose simulated accuracy on this chunk meets the
    target; 0 is the guaranteed fallback. Returns (md, accuracy, log)."""
    log: list[tuple[int, float]] = []
    for md in sorted(cfg.max_distance_grid, reverse=True):
        plan = select_rep_frames(view, md)
        dets_at = {pos: full_dets.get(pos, []) for pos in plan.frames}
        pred, _ = run_chunk(view, plan, dets_at, query, cfg, frame_shape)
        acc = chunk_accuracy(query, pred, full_dets, cfg.iou_threshold)
        log.append((md, acc))
        if acc >= query.accuracy_target:
            return md, acc, log
    return 0, log[-1][1] if log else 1.0, log


# --- end-to-end -----------------------------------------------------------------


def execute_query(
    index_dir,
    manifest: Manifest,
    assignment: ClusterAssignment,
    query: QuerySpec,
    detector: Detector,
    cfg: EngineConfig,
    timings: dict | None = None,
) -> QueryResult:
    """Calibrate per cluster, then run and propagate over every chunk."""
    import time as _time

    chunks = manifest.chunk_list()
    frame_shape = (manifest.height, manifest.width)
    views: dict[int, ChunkView] = {}

    def view_of(chunk_id: int) -> ChunkView:
        if chunk_id not in views:
            views[chunk_id] = ChunkView(read_chunk_index(index_dir, manifest, chunk_id))
        return views[chunk_id]

    def _tick(key: str, t_start: float) -> float:
        now = _time.perf_counter()
        if timings is not None:
            timings[key] = timings.get(key, 0.0) + (now - t_start)
        return now

    def detect_positions(positions) -> dict[int, list[Detection]]:
        t = _time.perf_counter()
        out = {}
        for pos in positions:
            dets = detector.detect(manifest.frame_of(pos))
            out[pos] = filter_by_label(dets, query.target_label)
        _tick("inference", t)
        return out

    per_cluster_md: dict[int, int] = {}
    centroid_full: dict[int, dict[int, list[Detection]]] = {}
    for c in range(assignment.k):
        centroid_id = assignment.centroid_chunks[c]
        cview = view_of(centroid_id)
        full = detect_positions(cview.positions())
        centroid_full[centroid_id] = full
        t = _time.perf_counter()
        md, acc, _log = calibrate_max_distance(cview, full, query, cfg, frame_shape)
        per_cluster_md[c] = md
        _tick("propagation", t)

    payload: dict[int, object] = {}
    provenance: dict[int, str] = {}
    for chunk in chunks:
        cview = view_of(chunk.chunk_id)
        cluster = assignment.labels[chunk.chunk_id]
        md = per_cluster_md[cluster]
        if chunk.chunk_id in centroid_full:
            full = centroid_full[chunk.chunk_id]
            for pos in cview.positions():
                dets = full[pos]
                if query.query_type == "binary_classification":
                    payload[pos] = len(dets) > 0
                elif query.query_type == "counting":
                    payload[pos] = len(dets)
                else:
                    payload[pos] = [(d.box, d.score) for d in dets]
                provenance[pos] = PROV_DIRECT
            continue
        plan = select_rep_frames(cview, md)
        dets_at = detect_positions(plan.frames)
        t = _time.perf_counter()
        chunk_payload, chunk_prov = run_chunk(cview, plan, dets_at, query, cfg, frame_shape)
        payload.update(chunk_payload)
        provenance.update(chunk_prov)
        _tick("propagation", t)

    positions = sorted(payload)
    if query.frame_range is not None:
        lo, hi = query.frame_range
        positions = [p for p in positions if lo <= manifest.frame_of(p) <= hi]
    frames = [manifest.frame_of(p) for p in positions]
    invoked = detector.profile.invocations
    fraction = invoked / max(1, len(positions))
    return QueryResult(
        query=query,
        frames=frames,
        payload={manifest.frame_of(p): payload[p] for p in positions},
        provenance={manifest.frame_of(p): provenance[p] for p in positions},
        per_cluster_max_distance=per_cluster_md,
        invoked_fraction=fraction,
        invocations=invoked,
    )
