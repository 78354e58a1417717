"""Pluggable detector gateway: oracle, noise-injected oracle, file-backed.

Every detector meters invocations: a frame counts once, on the first
detect() call; later calls are served from cache. The invocation count is
the engine's inference-cost proxy, so query execution must reach detections
only through this interface.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synth import GroundTruth, SyntheticScene, read_scene

WIRE_MAGIC = "rqdetections"
WIRE_VERSION = 1
EMPTY_LABEL = "-"


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    frame_index: int
    box: tuple[float, float, float, float]  # x1, y1, x2, y2
    label: str
    score: float


@dataclass
class DetectorProfile:
    detector_id: str
    frames_invoked: set[int] = field(default_factory=set)

    @property
    def invocations(self) -> int:
        return len(self.frames_invoked)


class Detector:
    """Base: caching + metering around a per-frame detection function."""

    def __init__(self, detector_id: str):
        self.detector_id = detector_id
        self.profile = DetectorProfile(detector_id)
        self._cache: dict[int, tuple[Detection, ...]] = {}
        self._lock = threading.Lock()

    def detect(self, frame_index: int) -> list[Detection]:
        with self._lock:
            hit = self._cache.get(frame_index)
            if hit is None:
                hit = tuple(self._detect(frame_index))
                self._cache[frame_index] = hit
                self.profile.frames_invoked.add(frame_index)
        return list(hit)

    def labels(self) -> list[str]:
        raise NotImplementedError

    def _detect(self, frame_index: int) -> list[Detection]:
        raise NotImplementedError


class OracleDetector(Detector):
    """Serves exact ground-truth boxes of a synthetic scene."""

    def __init__(self, scene: SyntheticScene, detector_id: str = "oracle"):
        super().__init__(detector_id)
        self.truth = GroundTruth(scene)

    def labels(self) -> list[str]:
        return self.truth.labels()

    def _detect(self, frame_index: int) -> list[Detection]:
        return [
            Detection(frame_index, tuple(float(v) for v in g.box), g.label, 1.0)
            for g in self.truth.boxes(frame_index)
        ]


class InconsistentOracleDetector(Detector):
    """Oracle with seeded inconsistency: dropout shrinking with box area,
    plus Gaussian box jitter. Mimics a real model's per-frame instability."""

    def __init__(
        self,
        scene: SyntheticScene,
        seed: int = 1,
        dropout_base: float = 0.25,
        dropout_area_scale: float = 60.0,
        jitter_sigma: float = 0.5,
        detector_id: str | None = None,
    ):
        super().__init__(detector_id or f"noisy-oracle-s{seed}")
        self.truth = GroundTruth(scene)
        self.scene = scene
        self.seed = seed
        self.dropout_base = dropout_base
        self.dropout_area_scale = dropout_area_scale
        self.jitter_sigma = jitter_sigma

    def labels(self) -> list[str]:
        return self.truth.labels()

    def _detect(self, frame_index: int) -> list[Detection]:
        out = []
        for ai, g in enumerate(self.truth.boxes(frame_index)):
            rng = np.random.default_rng((self.seed, frame_index, ai))
            x1, y1, x2, y2 = (float(v) for v in g.box)
            area = (x2 - x1 + 1.0) * (y2 - y1 + 1.0)
            p_drop = self.dropout_base * math.exp(-area / self.dropout_area_scale)
            if rng.random() < p_drop:
                continue
            jit = rng.normal(0.0, self.jitter_sigma, size=4)
            x1, y1, x2, y2 = x1 + jit[0], y1 + jit[1], x2 + jit[2], y2 + jit[3]
            x1, x2 = min(x1, x2 - 1e-3), max(x2, x1 + 1e-3)
            y1, y2 = min(y1, y2 - 1e-3), max(y2, y1 + 1e-3)
            x1 = min(max(x1, 0.0), self.scene.width - 1.0)
            y1 = min(max(y1, 0.0), self.scene.height - 1.0)
            x2 = min(max(x2, x1), self.scene.width - 1.0)
            y2 = min(max(y2, y1), self.scene.height - 1.0)
            score = round(0.5 + 0.5 * float(rng.random()), 3)
            out.append(Detection(frame_index, (x1, y1, x2, y2), g.label, score))
        return out


class PrecomputedDetector(Detector):
    """Serves detections parsed from a wire-format file."""

    def __init__(self, by_frame: dict[int, list[Detection]], detector_id: str):
        super().__init__(detector_id)
        self._by_frame = by_frame

    def labels(self) -> list[str]:
        return sorted({d.label for dets in self._by_frame.values() for d in dets})

    def frames(self) -> list[int]:
        return sorted(self._by_frame)

    def _detect(self, frame_index: int) -> list[Detection]:
        if frame_index not in self._by_frame:
            raise DetectorError(
                f"{self.detector_id}: no precomputed detections for frame {frame_index}"
            )
        return self._by_frame[frame_index]


def filter_by_label(dets: list[Detection], target_label: str) -> list[Detection]:
    return [d for d in dets if d.label == target_label]


# --- wire format --------------------------------------------------------------


def write_detections(
    path: str | Path, by_frame: dict[int, list[Detection]], meta: dict | None = None
) -> None:
    """Write the detection wire format; frames with no detections get a
    marker row so their coverage is explicit."""
    lines = [f"{WIRE_MAGIC} {WIRE_VERSION}"]
    labels = sorted({d.label for dets in by_frame.values() for d in dets})
    lines.append("# labels " + " ".join(labels))
    for k, v in (meta or {}).items():
        lines.append(f"# {k} {v}")
    for frame in sorted(by_frame):
        dets = by_frame[frame]
        if not dets:
            lines.append(f"{frame},{EMPTY_LABEL},0,0,0,0,0")
        for d in dets:
            x1, y1, x2, y2 = d.box
            lines.append(f"{frame},{d.label},{d.score:.4g},{x1:.2f},{y1:.2f},{x2:.2f},{y2:.2f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_detections(
    path: str | Path, frame_size: tuple[int, int] | None = None
) -> dict[int, list[Detection]]:
    """Parse and validate the wire format; errors carry the line number.

    frame_size (width, height), when known, bounds-checks every box.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DetectorError(f"{path}: empty detections file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != WIRE_MAGIC:
        raise DetectorError(f"{path}:1: bad header {lines[0]!r}")
    if int(head[1]) != WIRE_VERSION:
        raise DetectorError(f"{path}:1: unsupported version {head[1]}")
    by_frame: dict[int, list[Detection]] = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise DetectorError(f"{path}:{ln}: expected 7 fields, got {len(parts)}")
        try:
            frame = int(parts[0])
            score = float(parts[2])
            x1, y1, x2, y2 = (float(v) for v in parts[3:7])
        except ValueError as e:
            raise DetectorError(f"{path}:{ln}: {e}") from e
        label = parts[1]
        by_frame.setdefault(frame, [])
        if label == EMPTY_LABEL:
            continue
        if x2 < x1 or y2 < y1:
            raise DetectorError(f"{path}:{ln}: malformed box ({x1},{y1},{x2},{y2})")
        if not (0.0 <= score <= 1.0):
            raise DetectorError(f"{path}:{ln}: score {score} outside [0,1]")
        if frame_size is not None:
            w, h = frame_size
            if x1 < 0 or y1 < 0 or x2 > w - 1 or y2 > h - 1:
                raise DetectorError(
                    f"{path}:{ln}: box ({x1},{y1},{x2},{y2}) outside {w}x{h} frame"
                )
        by_frame[frame].append(Detection(frame, (x1, y1, x2, y2), label, score))
    return by_frame


def load_precomputed(
    path: str | Path, frame_size: tuple[int, int] | None = None
) -> PrecomputedDetector:
    by_frame = read_detections(path, frame_size)
    return PrecomputedDetector(by_frame, detector_id=f"file:{Path(path).name}")


def make_detector(spec: str, frame_size: tuple[int, int] | None = None) -> Detector:
    """Build a detector from a CLI spec.

    Forms: ``file:<path>``, ``oracle:<scene_file>``, or
    ``noisy:<scene_file>[:seed=N][:p0=F][:area=F][:sigma=F]``.
    """
    kind, _, rest = spec.partition(":")
    if kind == "file":
        return load_precomputed(rest, frame_size)
    if kind == "oracle":
        return OracleDetector(read_scene(rest))
    if kind == "noisy":
        parts = rest.split(":")
        scene = read_scene(parts[0])
        kw: dict[str, float] = {}
        names = {"seed": "seed", "p0": "dropout_base", "area": "dropout_area_scale", "sigma": "jitter_sigma"}
        for p in parts[1:]:
            k, _, v = p.partition("=")
            if k not in names:
                raise DetectorError(f"unknown detector option {k!r}")
            kw[names[k]] = int(v) if k == "seed" else float(v)
        return InconsistentOracleDetector(scene, **kw)  # type: ignore[arg-type]
    raise DetectorError(f"unknown detector spec {spec!r}")
