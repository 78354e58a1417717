"""Preprocessing orchestration: chunk jobs, worker pool, phase timing.

Each chunk job is self-contained: it re-opens the frame source, builds the
background over the chunk plus its neighbor windows, extracts blobs and
keypoints, matches consecutive frames, resolves trajectories, and writes
one chunk file. Jobs share no mutable state, so any worker count produces
byte-identical indices; the manifest is assembled in chunk-id order.

Phase buckets (report shares sum to 1): background covers histograms,
window resolution, segmentation and blob extraction; keypoints covers
detection and descriptors; trajectories covers matching, resolution,
features and the chunk write; clustering covers k-means plus the manifest.
Query execution later fills inference and propagation.
"""

from __future__ import annotations

import multiprocessing as mp
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .background import build_histograms, resolve_background
from .blobs import extract_blobs, refine, segment
from .clustering import cluster_chunks
from .config import EngineConfig
from .frames import (
    DownsampledStream,
    FrameStream,
    chunk_frame_count,
    open_directory,
    plan_chunks,
)
from .index_store import ChunkRecords, Manifest, write_chunk_index, write_manifest
from .keypoints import extract_keypoints, match_keypoints
from .synth import SyntheticScene, SyntheticSource
from .trajectories import ChunkWork, chunk_features, resolve_trajectories

PHASES = ("keypoints", "background", "trajectories", "clustering", "inference", "propagation")


@dataclass(frozen=True)
class SourceSpec:
    """Picklable description of a frame stream, re-openable inside workers."""

    kind: str  # "dir" | "scene"
    path: str | None = None
    fps: float = 0.0
    scene: SyntheticScene | None = None
    keep_rate: float | None = None

    def open(self) -> FrameStream:
        if self.kind == "dir":
            stream: FrameStream = open_directory(self.path, self.fps)
        elif self.kind == "scene":
            stream = SyntheticSource(self.scene)
        else:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.keep_rate is not None and self.keep_rate != stream.fps:
            stream = DownsampledStream(stream, self.keep_rate)
        return stream


def preprocess_video(
    source: SourceSpec,
    index_dir: str | Path,
    cfg: EngineConfig,
    video_id: str,
    workers: int | None = None,
) -> tuple[Manifest, dict[str, float]]:
    """Build the full index; returns the manifest and per-phase seconds."""
    index_dir = Path(index_dir)
    workers = workers or cfg.workers
    stream = source.open()
    if stream.count == 0:
        raise ValueError("no frames")
    chunk_frames = chunk_frame_count(cfg.chunk_frames, cfg.chunk_seconds, stream.fps)
    chunks = plan_chunks(stream.count, chunk_frames)
    indices = stream.frame_indices
    first = indices[0]
    stride = indices[1] - indices[0] if len(indices) > 1 else 1

    manifest_like = {"frame_first": first, "frame_stride": stride}
    ext = max(1, cfg.extension_chunks)
    jobs = []
    for i in range(len(chunks)):
        prev_range = (
            range(chunks[max(0, i - ext)].start_pos, chunks[i - 1].end_pos + 1) if i > 0 else None
        )
        last = min(len(chunks) - 1, i + ext)
        next_range = (
            range(chunks[i + 1].start_pos, chunks[last].end_pos + 1)
            if i + 1 < len(chunks)
            else None
        )
        jobs.append(
            (source, cfg, chunks[i], prev_range, next_range, str(index_dir), manifest_like)
        )

    timings: dict[str, float] = {p: 0.0 for p in PHASES}
    try:
        if workers > 1:
            with mp.get_context("fork").Pool(workers) as pool:
                results = pool.map(_process_chunk, jobs)
        else:
            results = [_process_chunk(j) for j in jobs]
    except Exception:
        shutil.rmtree(index_dir / "chunks", ignore_errors=True)
        raise

    entries = []
    features = []
    for entry, feat, job_times in sorted(results, key=lambda r: r[0]["chunk_id"]):
        entries.append(entry)
        features.append(np.asarray(feat))
        for k, v in job_times.items():
            timings[k] += v

    t0 = time.perf_counter()
    assignment = cluster_chunks(features, cfg.cluster_coverage, cfg.cluster_seed, cfg.kmeans_max_iter)
    manifest = Manifest(
        video_id=video_id,
        width=stream.width,
        height=stream.height,
        fps=stream.fps,
        frame_count=stream.count,
        frame_first=first,
        frame_stride=stride,
        chunk_frames=chunk_frames,
        config_fingerprint=cfg.fingerprint(),
        config=cfg.to_dict(),
        chunks=entries,
        clustering=assignment.to_dict(),
    )
    write_manifest(index_dir, manifest)
    timings["clustering"] += time.perf_counter() - t0
    return manifest, timings


def _process_chunk(job) -> tuple[dict, list, dict]:
    source, cfg, chunk, prev_range, next_range, index_dir, manifest_like = job
    stream = source.open()
    times = {"background": 0.0, "keypoints": 0.0, "trajectories": 0.0}

    t0 = time.perf_counter()
    hist = build_histograms(stream, chunk.positions(), cfg.region_size, cfg.bin_width)
    hist_prev = (
        build_histograms(stream, prev_range, cfg.region_size, cfg.bin_width)
        if prev_range
        else None
    )
    hist_next = (
        build_histograms(stream, next_range, cfg.region_size, cfg.bin_width)
        if next_range
        else None
    )
    bg = resolve_background(
        hist,
        hist_next,
        hist_prev,
        cfg.peak_fraction,
        cfg.peak_bin_drift,
        frame_shape=(stream.height, stream.width),
    )
    times["background"] += time.perf_counter() - t0

    blobs_rows = []
    labels_rows = []
    kps_rows = []
    frame_indices = []
    for pos in chunk.positions():
        frame = stream.read_position(pos)
        frame_indices.append(frame.frame_index)
        tb = time.perf_counter()
        mask = refine(segment(frame.pixels, bg, cfg.segment_tolerance), cfg.open_radius, cfg.close_radius)
        frame_blobs, labels = extract_blobs(mask, frame.frame_index, cfg.min_blob_area)
        times["background"] += time.perf_counter() - tb
        tk = time.perf_counter()
        kps = extract_keypoints(
            frame.pixels,
            frame.frame_index,
            labels,
            octaves=cfg.kp_octaves,
            contrast_threshold=cfg.kp_contrast_threshold,
            edge_ratio=cfg.kp_edge_ratio,
            max_keypoints=cfg.kp_max_per_frame,
            drop_unassigned=True,
            boxes=[b.box for b in frame_blobs],
        )
        times["keypoints"] += time.perf_counter() - tk
        blobs_rows.append(frame_blobs)
        labels_rows.append(labels)
        kps_rows.append(kps)

    tt = time.perf_counter()
    matches = [
        match_keypoints(kps_rows[i], kps_rows[i + 1], cfg.kp_match_ratio)
        for i in range(len(kps_rows) - 1)
    ]
    work = ChunkWork(chunk, frame_indices, blobs_rows, labels_rows, kps_rows, matches)
    resolved, trajectories, chains = resolve_trajectories(work, cfg.min_support, cfg.max_passes)
    feats = chunk_features(trajectories, resolved)

    blobs_by_pos = {}
    for off, pos in enumerate(chunk.positions()):
        if resolved[off]:
            blobs_by_pos[pos] = resolved[off]
    global_chains = []
    for c in chains:
        c.entries = [(chunk.start_pos + p, x, y, t) for p, x, y, t in c.entries]
        global_chains.append(c)
    records = ChunkRecords(chunk, blobs_by_pos, global_chains, feats, bg)
    entry = write_chunk_index(index_dir, records, manifest_like)
    times["trajectories"] += time.perf_counter() - tt
    return entry, feats.tolist(), times


def profile_phases(timings: dict[str, float]) -> dict[str, float]:
    """Normalized share per phase over the tracked categories."""
    total = sum(timings.get(p, 0.0) for p in PHASES)
    if total <= 0:
        return {p: 0.0 for p in PHASES}
    return {p: timings.get(p, 0.0) / total for p in PHASES}
