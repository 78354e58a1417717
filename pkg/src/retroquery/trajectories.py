"""Chunk-scoped trajectories from per-frame blobs and keypoint matches.

Blobs are linked across consecutive frames by counting keypoint matches
between them. Links can form any N-to-N shape; splits discovered at a later
frame are propagated backwards, carving earlier merged blobs into sub-blobs
(partitioned by which later blob their keypoints flow to). After the node
structure stabilizes, trajectory ids run forward along clean 1-to-1 links;
merges close their source trajectories and open a fresh one.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .blobs import Blob
from .frames import Chunk
from .keypoints import FrameKeypoints, MatchSet


class TrajectoryError(RuntimeError):
    pass


@dataclass
class ChunkWork:
    """Transient per-chunk preprocessing state (offsets are chunk-local)."""

    chunk: Chunk
    frame_indices: list[int]  # original frame index per offset
    blobs: list[list[Blob]]
    labels: list[np.ndarray]
    keypoints: list[FrameKeypoints]
    matches: list[MatchSet]  # matches[i] pairs offset i with i+1


@dataclass
class Correspondence:
    """Blob-level links between one frame pair, weighted by match support."""

    support: dict[tuple[int, int], int]

    def links_from(self, bi: int) -> list[tuple[int, int]]:
        return sorted((bj, s) for (a, bj), s in self.support.items() if a == bi)

    def links_to(self, bj: int) -> list[tuple[int, int]]:
        return sorted((bi, s) for (bi, b), s in self.support.items() if b == bj)


def build_correspondences(
    matches: MatchSet,
    kps_i: FrameKeypoints,
    kps_j: FrameKeypoints,
    min_support: int,
) -> Correspondence:
    """Count matches per (blob on frame i, blob on frame j); drop weak links."""
    counts: Counter = Counter()
    for ia, ib in zip(matches.idx_a, matches.idx_b):
        bi = int(kps_i.blob_ids[ia])
        bj = int(kps_j.blob_ids[ib])
        if bi >= 0 and bj >= 0:
            counts[(bi, bj)] += 1
    return Correspondence({k: v for k, v in counts.items() if v >= min_support})


@dataclass
class _Node:
    """A resolved blob (possibly a split fragment) on one frame offset."""

    source_blob: int
    kp_ids: np.ndarray  # int64 indices into the offset's FrameKeypoints
    box: tuple[int, int, int, int]
    area: int
    pix_y: np.ndarray | None = None  # foreground pixels, lazy for unsplit nodes
    pix_x: np.ndarray | None = None
    traj: int = -1


@dataclass
class Trajectory:
    trajectory_id: int
    chunk_id: int
    entries: list[tuple[int, Blob]] = field(default_factory=list)  # (offset, blob)

    @property
    def length(self) -> int:
        return len(self.entries)

    @property
    def start(self) -> int:
        return self.entries[0][0]

    @property
    def end(self) -> int:
        return self.entries[-1][0]


@dataclass
class Chain:
    """One keypoint tracked over consecutive offsets: [(offset, x, y, traj)]."""

    entries: list[tuple[int, float, float, int]]


def resolve_trajectories(
    work: ChunkWork, min_support: int = 3, max_passes: int = 8
) -> tuple[list[list[Blob]], list[Trajectory], list[Chain]]:
    """Resolve the chunk into trajectories, split-corrected blobs, and chains."""
    n = len(work.blobs)
    nodes: list[list[_Node]] = []
    kp_node: list[np.ndarray] = []
    for p in range(n):
        frame_nodes = []
        for b, blob in enumerate(work.blobs[p]):
            kset = np.nonzero(work.keypoints[p].blob_ids == b)[0].astype(np.int64)
            frame_nodes.append(_Node(b, kset, blob.box, blob.pixel_area))
        nodes.append(frame_nodes)
        owner = np.full(work.keypoints[p].count, -1, dtype=np.int64)
        for i, node in enumerate(frame_nodes):
            owner[node.kp_ids] = i
        kp_node.append(owner)

    # backward split propagation until the node structure stabilizes
    for _pass in range(max_passes):
        changed = False
        for p in range(n - 2, -1, -1):
            flows = _flow_counts(work.matches[p], kp_node[p], kp_node[p + 1])
            for u in range(len(nodes[p]) - 1, -1, -1):
                dests = sorted(
                    (v for (a, v), s in flows.items() if a == u and s >= min_support)
                )
                if len(dests) >= 2:
                    _split_node(work, nodes, kp_node, p, u, dests, min_support)
                    changed = True
        if not changed:
            break
    else:
        if changed:
            raise TrajectoryError(
                f"chunk {work.chunk.chunk_id}: splits did not converge in {max_passes} passes"
            )

    # forward trajectory assignment along clean 1-to-1 links
    next_id = 0
    for p in range(n):
        incoming: dict[int, list[int]] = defaultdict(list)
        if p > 0:
            flows = _flow_counts(work.matches[p - 1], kp_node[p - 1], kp_node[p])
            for (u, v), s in sorted(flows.items()):
                if s >= min_support:
                    incoming[v].append(u)
        for v, node in enumerate(nodes[p]):
            srcs = incoming.get(v, [])
            if len(srcs) == 1:
                node.traj = nodes[p - 1][srcs[0]].traj
            else:
                node.traj = next_id
                next_id += 1

    resolved: list[list[Blob]] = []
    trajectories: dict[int, Trajectory] = {}
    for p in range(n):
        row = []
        for node in nodes[p]:
            blob = Blob(
                frame_index=work.frame_indices[p],
                box=node.box,
                pixel_area=node.area,
                trajectory_id=node.traj,
            )
            row.append(blob)
            trajectories.setdefault(
                node.traj, Trajectory(node.traj, work.chunk.chunk_id)
            ).entries.append((p, blob))
        resolved.append(row)

    chains = _build_chains(work, nodes, kp_node)
    traj_list = [trajectories[t] for t in sorted(trajectories)]
    return resolved, traj_list, chains


def _flow_counts(matches: MatchSet, owner_i: np.ndarray, owner_j: np.ndarray) -> dict:
    counts: Counter = Counter()
    for ia, ib in zip(matches.idx_a, matches.idx_b):
        u = owner_i[ia]
        v = owner_j[ib]
        if u >= 0 and v >= 0:
            counts[(int(u), int(v))] += 1
    return counts


def _split_node(
    work: ChunkWork,
    nodes: list[list[_Node]],
    kp_node: list[np.ndarray],
    p: int,
    u: int,
    dests: list[int],
    min_support: int,
) -> None:
    """Split node u at offset p into one fragment per destination node.

    Keypoints matched to a destination form that fragment's core; leftover
    keypoints join the group with the nearest core keypoint. The node's
    foreground pixels are then partitioned by nearest keypoint, and each
    fragment's box is the tight box of its pixel cell.
    """
    node = nodes[p][u]
    kps = work.keypoints[p]
    match = work.matches[p]
    groups: list[list[int]] = [[] for _ in dests]
    dest_index = {d: gi for gi, d in enumerate(dests)}
    assigned = {}
    for ia, ib in zip(match.idx_a, match.idx_b):
        if kp_node[p][ia] == u:
            v = int(kp_node[p + 1][ib])
            gi = dest_index.get(v)
            if gi is not None:
                groups[gi].append(int(ia))
                assigned[int(ia)] = gi

    leftovers = [int(k) for k in node.kp_ids if int(k) not in assigned]
    core_xy = [
        np.column_stack([kps.xs[g], kps.ys[g]]) if g else np.zeros((0, 2)) for g in groups
    ]
    for k in leftovers:
        pos = np.array([kps.xs[k], kps.ys[k]])
        best_gi, best_d = 0, np.inf
        for gi, xy in enumerate(core_xy):
            if len(xy):
                d = float(((xy - pos) ** 2).sum(axis=1).min())
                if d < best_d - 1e-12:
                    best_d = d
                    best_gi = gi
        groups[best_gi].append(k)

    if node.pix_y is None:
        lbl = work.labels[p]
        ys, xs = np.nonzero(lbl == node.source_blob + 1)
    else:
        ys, xs = node.pix_y, node.pix_x

    group_of_kp = np.full(kps.count, -1, dtype=np.int64)
    for gi, g in enumerate(groups):
        group_of_kp[g] = gi
    all_kp = np.concatenate([np.asarray(g, dtype=np.int64) for g in groups])
    kx = kps.xs[all_kp]
    ky = kps.ys[all_kp]
    kg = group_of_kp[all_kp]
    if len(ys) and len(all_kp):
        d2 = (xs[:, None] - kx[None, :]) ** 2 + (ys[:, None] - ky[None, :]) ** 2
        owner_kp = d2.argmin(axis=1)
        pixel_group = kg[owner_kp]
    else:
        pixel_group = np.zeros(len(ys), dtype=np.int64)

    fragments = []
    for gi, g in enumerate(groups):
        sel = pixel_group == gi
        gy, gx = ys[sel], xs[sel]
        if len(gy):
            box = (int(gx.min()), int(gy.min()), int(gx.max()), int(gy.max()))
            area = int(sel.sum())
        else:
            rx = np.rint(kps.xs[g]).astype(int)
            ry = np.rint(kps.ys[g]).astype(int)
            box = (int(rx.min()), int(ry.min()), int(rx.max()), int(ry.max()))
            area = len(g)
        fragments.append(
            _Node(
                node.source_blob,
                np.array(sorted(g), dtype=np.int64),
                box,
                area,
                gy,
                gx,
            )
        )

    nodes[p][u : u + 1] = fragments
    owner = kp_node[p]
    owner[owner > u] += len(fragments) - 1
    for off, frag in enumerate(fragments):
        owner[frag.kp_ids] = u + off


def _build_chains(
    work: ChunkWork, nodes: list[list[_Node]], kp_node: list[np.ndarray]
) -> list[Chain]:
    """Follow matches into per-keypoint chains spanning consecutive offsets."""
    n = len(work.blobs)
    chains: list[Chain] = []
    active: dict[int, Chain] = {}  # kp index at current offset -> chain
    for p in range(n - 1):
        match = work.matches[p]
        kps_i = work.keypoints[p]
        kps_j = work.keypoints[p + 1]
        nxt: dict[int, Chain] = {}
        order = np.argsort(match.idx_a, kind="stable")
        for ia, ib in zip(match.idx_a[order], match.idx_b[order]):
            ia, ib = int(ia), int(ib)
            ui = kp_node[p][ia]
            vj = kp_node[p + 1][ib]
            if ui < 0 or vj < 0:
                continue
            chain = active.get(ia)
            if chain is None:
                chain = Chain(
                    [(p, float(kps_i.xs[ia]), float(kps_i.ys[ia]), nodes[p][ui].traj)]
                )
                chains.append(chain)
            chain.entries.append(
                (p + 1, float(kps_j.xs[ib]), float(kps_j.ys[ib]), nodes[p + 1][vj].traj)
            )
            nxt[ib] = chain
        active = nxt
    return [c for c in chains if len(c.entries) >= 2]


def chunk_features(
    trajectories: list[Trajectory], blobs: list[list[Blob]]
) -> np.ndarray:
    """Fixed-length model-agnostic feature vector describing one chunk.

    Layout: blob-area p10/p50/p90, trajectory-length p10/p50/p90,
    blobs-per-frame mean and p90, and the count of (frame, trajectory-pair)
    box intersections between distinct trajectories.
    """
    areas = [b.pixel_area for row in blobs for b in row]
    if not areas:
        return np.zeros(9, dtype=np.float64)
    lengths = [t.length for t in trajectories]
    per_frame = [len(row) for row in blobs]
    intersections = 0
    for row in blobs:
        for i in range(len(row)):
            for j in range(i + 1, len(row)):
                if row[i].trajectory_id != row[j].trajectory_id and _overlaps(
                    row[i].box, row[j].box
                ):
                    intersections += 1
    q = lambda v, p: float(np.percentile(v, p))
    return np.array(
        [
            q(areas, 10), q(areas, 50), q(areas, 90),
            q(lengths, 10), q(lengths, 50), q(lengths, 90),
            float(np.mean(per_frame)), q(per_frame, 90),
            float(intersections),
        ],
        dtype=np.float64,
    )


def _overlaps(a: tuple, b: tuple) -> bool:
    return min(a[2], b[2]) > max(a[0], b[0]) and min(a[3], b[3]) > max(a[1], b[1])
