"""Offline detector adapter.

Runs a detector over a directory of frames (frames named %06d.pgm or .png)
and writes the detection wire format consumed by the analytics engine:

    rqdetections 1
    # labels <vocabulary>
    frame,label,score,x1,y1,x2,y2

A frame with no detections still gets a marker row (label ``-``) so the
file provably covers every frame. The adapter is strictly batch: it shares
nothing with the engine except this file format and the frame directory
layout.

Bundled models:

- ``brightblob:threshold=T:min_area=A:label=L`` -- classical bright-region
  detector: threshold, 4-connected components, tight boxes.
- ``hog-person`` -- OpenCV's pretrained HOG+SVM people detector (needs
  opencv-python-headless).
"""

from __future__ import annotations

import os
import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WIRE_MAGIC = "rqdetections"
WIRE_VERSION = 1
EMPTY_LABEL = "-"


class AdapterError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    label: str
    score: float
    x1: float
    y1: float
    x2: float
    y2: float


# --- frame loading -------------------------------------------------------------


def read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise AdapterError(f"{path}: not a binary PGM file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise AdapterError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def load_frame(path: Path) -> np.ndarray:
    if path.suffix == ".pgm":
        return read_pgm(path)
    import cv2  # noqa: PLC0415 - optional dependency, PNG path only

    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise AdapterError(f"{path}: unreadable image")
    return img


def list_frames(frame_dir: str | Path) -> list[tuple[int, Path]]:
    frame_dir = Path(frame_dir)
    if not frame_dir.is_dir():
        raise AdapterError(f"{frame_dir}: not a directory")
    found: dict[int, Path] = {}
    for f in sorted(frame_dir.iterdir()):
        m = re.fullmatch(r"(\d{6})\.(pgm|png)", f.name)
        if m:
            found[int(m.group(1))] = f
    if not found:
        raise AdapterError(f"{frame_dir}: no frames")
    frames = sorted(found.items())
    for expect, (idx, _) in enumerate(frames):
        if idx != expect:
            raise AdapterError(f"{frame_dir}: missing frame {expect:06d}")
    return frames


# --- models ----------------------------------------------------------------------


class BrightBlobModel:
    """Threshold + connected components; a real (if classical) detector."""

    def __init__(self, threshold: int = 128, min_area: int = 16, label: str = "object"):
        self.threshold = threshold
        self.min_area = min_area
        self.label = label

    def detect(self, frame: np.ndarray) -> list[Box]:
        fg = frame > self.threshold
        h, w = fg.shape
        seen = np.zeros_like(fg, dtype=bool)
        out = []
        for sy, sx in zip(*np.nonzero(fg)):
            if seen[sy, sx]:
                continue
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            ys = [sy]
            xs = [sx]
            total = 0.0
            while queue:
                y, x = queue.popleft()
                total += frame[y, x]
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        ys.append(ny)
                        xs.append(nx)
                        queue.append((ny, nx))
            if len(ys) >= self.min_area:
                score = min(1.0, total / (len(ys) * 255.0))
                out.append(
                    Box(self.label, round(score, 4), min(xs), min(ys), max(xs), max(ys))
                )
        out.sort(key=lambda b: (b.y1, b.x1))
        return out


class HogPersonModel:
    """OpenCV pretrained HOG+SVM pedestrian detector (OpenCV 4.x)."""

    def __init__(self):
        try:
            import cv2
        except ImportError as e:  # pragma: no cover
            raise AdapterError("hog-person requires opencv-python-headless") from e
        if not hasattr(cv2, "HOGDescriptor"):
            raise AdapterError(
                "this OpenCV build has no HOGDescriptor (removed in OpenCV 5); "
                "install opencv-python-headless<5 or use the brightblob model"
            )
        self._cv2 = cv2
        self._hog = cv2.HOGDescriptor()
        self._hog.setSVMDetector(cv2.HOGDescriptor_getDefaultPeopleDetector())

    def detect(self, frame: np.ndarray) -> list[Box]:
        rects, weights = self._hog.detectMultiScale(frame, winStride=(8, 8))
        out = []
        for (x, y, w, h), wgt in zip(rects, np.ravel(weights) if len(rects) else []):
            score = float(1.0 / (1.0 + np.exp(-wgt)))
            out.append(Box("person", round(score, 4), x, y, x + w - 1, y + h - 1))
        out.sort(key=lambda b: (b.y1, b.x1))
        return out


def make_model(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "brightblob":
        kw: dict = {}
        for tok in filter(None, rest.split(":")):
            k, _, v = tok.partition("=")
            if k == "threshold":
                kw["threshold"] = int(v)
            elif k == "min_area":
                kw["min_area"] = int(v)
            elif k == "label":
                kw["label"] = v
            else:
                raise AdapterError(f"unknown brightblob option {k!r}")
        return BrightBlobModel(**kw)
    if kind == "hog-person":
        return HogPersonModel()
    raise AdapterError(f"unknown model spec {spec!r}")


# --- the adapter --------------------------------------------------------------


def run_adapter(frame_dir: str | Path, model_spec: str, out_path: str | Path) -> Path:
    """Run the model over every frame and write the wire file atomically.

    A failure on any frame aborts with that frame's id and removes the
    partial output.
    """
    frames = list_frames(frame_dir)
    model = make_model(model_spec)
    out_path = Path(out_path)
    tmp = out_path.with_suffix(out_path.suffix + ".tmp")

    per_frame: list[tuple[int, list[Box]]] = []
    for idx, path in frames:
        try:
            h, w = (arr := load_frame(path)).shape
            boxes = model.detect(arr)
            for b in boxes:
                if not (0 <= b.x1 <= b.x2 <= w - 1 and 0 <= b.y1 <= b.y2 <= h - 1):
                    raise AdapterError(f"box {b} outside {w}x{h} frame")
                if not (0.0 <= b.score <= 1.0):
                    raise AdapterError(f"score {b.score} outside [0,1]")
        except Exception as e:
            tmp.unlink(missing_ok=True)
            raise AdapterError(f"inference failed on frame {idx}: {e}") from e
        per_frame.append((idx, boxes))

    labels = sorted({b.label for _, boxes in per_frame for b in boxes})
    lines = [f"{WIRE_MAGIC} {WIRE_VERSION}", "# labels " + " ".join(labels)]
    lines.append(f"# model {model_spec}")
    for idx, boxes in per_frame:
        if not boxes:
            lines.append(f"{idx},{EMPTY_LABEL},0,0,0,0,0")
        for b in boxes:
            lines.append(
                f"{idx},{b.label},{b.score:.4g},{b.x1:.2f},{b.y1:.2f},{b.x2:.2f},{b.y2:.2f}"
            )
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, out_path)
    return out_path
