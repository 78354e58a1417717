"""Persistent per-video index: manifest plus one line-record file per chunk.

Chunk files are plain text with a version header, a JSON meta line, then one
record per line: B (blob box + trajectory id per frame), K (matched keypoint
chain), F (chunk feature vector), G (background estimate, compressed).
Writes are atomic (temp + rename) and byte-reproducible from equal inputs;
the manifest carries a sha256 per chunk file.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .background import BackgroundEstimate
from .blobs import Blob
from .frames import Chunk
from .trajectories import Chain

FORMAT_VERSION = 1
CHUNK_MAGIC = "rqchunk"


class IndexStoreError(ValueError):
    pass


class VersionMismatch(IndexStoreError):
    pass


class ChecksumMismatch(IndexStoreError):
    pass


class InvariantViolation(IndexStoreError):
    pass


@dataclass
class ChunkRecords:
    chunk: Chunk
    blobs_by_pos: dict[int, list[Blob]]  # global stream position -> blobs
    chains: list[Chain]  # entries carry global positions
    features: np.ndarray
    background: BackgroundEstimate


@dataclass
class Manifest:
    video_id: str
    width: int
    height: int
    fps: float
    frame_count: int
    frame_first: int
    frame_stride: int
    chunk_frames: int
    config_fingerprint: str
    config: dict
    chunks: list[dict]
    clustering: dict | None = None
    format_version: int = FORMAT_VERSION

    def chunk_meta(self, chunk_id: int) -> dict:
        for c in self.chunks:
            if c["chunk_id"] == chunk_id:
                return c
        raise IndexStoreError(f"chunk {chunk_id} not in manifest")

    def chunk_list(self) -> list[Chunk]:
        return [Chunk(c["chunk_id"], c["start_pos"], c["end_pos"]) for c in self.chunks]

    def position_of(self, frame_index: int) -> int:
        return (frame_index - self.frame_first) // self.frame_stride

    def frame_of(self, position: int) -> int:
        return self.frame_first + self.frame_stride * position


def chunk_file_name(chunk_id: int) -> str:
    return f"chunks/chunk_{chunk_id:06d}.txt"


def write_chunk_index(index_dir: str | Path, records: ChunkRecords, manifest_like: dict) -> dict:
    """Write one chunk file atomically; returns its manifest entry."""
    index_dir = Path(index_dir)
    rel = chunk_file_name(records.chunk.chunk_id)
    path = index_dir / rel
    path.parent.mkdir(parents=True, exist_ok=True)

    first = manifest_like["frame_first"]
    stride = manifest_like["frame_stride"]
    lines = [f"{CHUNK_MAGIC} {FORMAT_VERSION}"]
    n_blobs = sum(len(v) for v in records.blobs_by_pos.values())
    meta = {
        "chunk_id": records.chunk.chunk_id,
        "start_pos": records.chunk.start_pos,
        "end_pos": records.chunk.end_pos,
        "n_blobs": n_blobs,
        "n_chains": len(records.chains),
    }
    lines.append("M " + json.dumps(meta, sort_keys=True, separators=(",", ":")))
    for pos in sorted(records.blobs_by_pos):
        for b in records.blobs_by_pos[pos]:
            x1, y1, x2, y2 = b.box
            frame = first + stride * pos
            lines.append(f"B {frame} {x1} {y1} {x2} {y2} {b.pixel_area} {b.trajectory_id}")
    for chain in records.chains:
        parts = [
            f"{traj}:{first + stride * pos}:{x:.2f}:{y:.2f}" for pos, x, y, traj in chain.entries
        ]
        lines.append("K " + " ".join(parts))
    feat = " ".join(format(float(v), ".17g") for v in records.features)
    lines.append("F " + feat)
    bg = records.background
    raw = np.ascontiguousarray(bg.values, dtype=np.float32).tobytes()
    packed = base64.b64encode(zlib.compress(raw, 6)).decode("ascii")
    k, (gr, gc) = bg.values.shape[0], bg.grid
    lines.append(
        f"G {k} {gr} {gc} {bg.region_size} {bg.frame_shape[0]} {bg.frame_shape[1]} {packed}"
    )

    payload = ("\n".join(lines) + "\n").encode("utf-8")
    _atomic_write(path, payload)
    return {
        "chunk_id": records.chunk.chunk_id,
        "start_pos": records.chunk.start_pos,
        "end_pos": records.chunk.end_pos,
        "file": rel,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "bytes": len(payload),
    }


def read_chunk_index(index_dir: str | Path, manifest: Manifest, chunk_id: int) -> ChunkRecords:
    index_dir = Path(index_dir)
    meta_entry = manifest.chunk_meta(chunk_id)
    path = index_dir / meta_entry["file"]
    payload = path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != meta_entry["sha256"]:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    lines = payload.decode("utf-8").splitlines()
    if not lines:
        raise IndexStoreError(f"{path}: empty chunk file")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != CHUNK_MAGIC:
        raise IndexStoreError(f"{path}: bad header {lines[0]!r}")
    if int(magic[1]) != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {magic[1]} (expected {FORMAT_VERSION})")
    if not lines[1].startswith("M "):
        raise IndexStoreError(f"{path}: missing meta line")
    meta = json.loads(lines[1][2:])
    chunk = Chunk(meta["chunk_id"], meta["start_pos"], meta["end_pos"])

    blobs_by_pos: dict[int, list[Blob]] = {}
    chains: list[Chain] = []
    features: np.ndarray | None = None
    background: BackgroundEstimate | None = None
    for ln, line in enumerate(lines[2:], start=3):
        kind, _, rest = line.partition(" ")
        if kind == "B":
            f = rest.split()
            frame = int(f[0])
            pos = manifest.position_of(frame)
            box = (int(f[1]), int(f[2]), int(f[3]), int(f[4]))
            blob = Blob(frame, box, int(f[5]), int(f[6]))
            if not (chunk.start_pos <= pos <= chunk.end_pos):
                raise InvariantViolation(f"{path}:{ln}: blob frame {frame} outside chunk")
            if box[0] > box[2] or box[1] > box[3]:
                raise InvariantViolation(f"{path}:{ln}: degenerate box {box}")
            blobs_by_pos.setdefault(pos, []).append(blob)
        elif kind == "K":
            entries = []
            for tok in rest.split():
                traj_s, frame_s, x_s, y_s = tok.split(":")
                entries.append(
                    (manifest.position_of(int(frame_s)), float(x_s), float(y_s), int(traj_s))
                )
            chains.append(Chain(entries))
        elif kind == "F":
            features = np.array([float(v) for v in rest.split()], dtype=np.float64)
        elif kind == "G":
            f = rest.split()
            k, gr, gc, rs, fh, fw = (int(v) for v in f[:6])
            raw = zlib.decompress(base64.b64decode(f[6]))
            values = np.frombuffer(raw, dtype=np.float32).reshape(k, gr * gc).copy()
            background = BackgroundEstimate(values, (gr, gc), rs, (fh, fw))
        else:
            raise IndexStoreError(f"{path}:{ln}: unknown record kind {kind!r}")

    if features is None or background is None:
        raise IndexStoreError(f"{path}: incomplete chunk file")
    n_blobs = sum(len(v) for v in blobs_by_pos.values())
    if n_blobs != meta["n_blobs"] or len(chains) != meta["n_chains"]:
        raise InvariantViolation(f"{path}: record counts disagree with meta line")
    traj_ids = {b.trajectory_id for row in blobs_by_pos.values() for b in row}
    for chain in chains:
        for pos, _, _, traj in chain.entries:
            if traj not in traj_ids:
                raise InvariantViolation(f"{path}: chain references unknown trajectory {traj}")
            if not (chunk.start_pos <= pos <= chunk.end_pos):
                raise InvariantViolation(f"{path}: chain position {pos} outside chunk")
    return ChunkRecords(chunk, blobs_by_pos, chains, features, background)


def write_manifest(index_dir: str | Path, manifest: Manifest) -> None:
    index_dir = Path(index_dir)
    index_dir.mkdir(parents=True, exist_ok=True)
    data = {
        "format_version": manifest.format_version,
        "video_id": manifest.video_id,
        "width": manifest.width,
        "height": manifest.height,
        "fps": manifest.fps,
        "frame_count": manifest.frame_count,
        "frame_first": manifest.frame_first,
        "frame_stride": manifest.frame_stride,
        "chunk_frames": manifest.chunk_frames,
        "config_fingerprint": manifest.config_fingerprint,
        "config": manifest.config,
        "chunks": manifest.chunks,
        "clustering": manifest.clustering,
    }
    payload = (json.dumps(data, sort_keys=True, indent=1) + "\n").encode("utf-8")
    _atomic_write(index_dir / "manifest.json", payload)


def load_manifest(index_dir: str | Path) -> Manifest:
    path = Path(index_dir) / "manifest.json"
    if not path.exists():
        raise IndexStoreError(f"{path}: no index manifest")
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {data.get('format_version')} (expected {FORMAT_VERSION})"
        )
    return Manifest(
        video_id=data["video_id"],
        width=data["width"],
        height=data["height"],
        fps=data["fps"],
        frame_count=data["frame_count"],
        frame_first=data["frame_first"],
        frame_stride=data["frame_stride"],
        chunk_frames=data["chunk_frames"],
        config_fingerprint=data["config_fingerprint"],
        config=data["config"],
        chunks=data["chunks"],
        clustering=data.get("clustering"),
    )


def storage_report(index_dir: str | Path) -> dict:
    """Byte totals per record category, reconciled against file sizes."""
    index_dir = Path(index_dir)
    manifest = load_manifest(index_dir)
    cats = {"keypoints": 0, "blobs": 0, "features": 0, "background": 0, "headers": 0}
    total = 0
    for entry in manifest.chunks:
        path = index_dir / entry["file"]
        data = path.read_bytes()
        total += len(data)
        for line in data.split(b"\n"):
            if not line:
                continue
            nbytes = len(line) + 1
            if line.startswith(b"K "):
                cats["keypoints"] += nbytes
            elif line.startswith(b"B "):
                cats["blobs"] += nbytes
            elif line.startswith(b"F "):
                cats["features"] += nbytes
            elif line.startswith(b"G "):
                cats["background"] += nbytes
            else:
                cats["headers"] += nbytes
    cats["total"] = total
    return cats


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
