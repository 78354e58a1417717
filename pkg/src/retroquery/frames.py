"""Frame access: directory-backed streams, grayscale ingest, downsampling.

All processing downstream runs on 8-bit grayscale rasters. Color inputs are
converted at load with luma weights 0.299/0.587/0.114. Streams expose frames
both by stream position (0..count-1) and by their original frame_index,
which survives downsampling.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LUMA = (0.299, 0.587, 0.114)


class FrameSourceError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    frame_index: int
    pixels: np.ndarray  # uint8, shape (height, width)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class Chunk:
    """Contiguous run of stream positions; trajectories never cross chunks."""

    chunk_id: int
    start_pos: int
    end_pos: int  # inclusive

    @property
    def n_frames(self) -> int:
        return self.end_pos - self.start_pos + 1

    def positions(self) -> range:
        return range(self.start_pos, self.end_pos + 1)


class FrameStream:
    """Base for random-access frame sequences.

    Subclasses set width/height/fps and frame index bookkeeping, and
    implement _load(frame_index) -> uint8 array.
    """

    width: int
    height: int
    fps: float

    def __init__(self, frame_indices: list[int], fps: float):
        self._indices = list(frame_indices)
        self.fps = fps

    @property
    def count(self) -> int:
        return len(self._indices)

    @property
    def frame_indices(self) -> list[int]:
        return list(self._indices)

    def index_at(self, position: int) -> int:
        return self._indices[position]

    def read_position(self, position: int) -> Frame:
        idx = self._indices[position]
        return Frame(frame_index=idx, pixels=self._load(idx))

    def __iter__(self):
        for p in range(self.count):
            yield self.read_position(p)

    def _load(self, frame_index: int) -> np.ndarray:
        raise NotImplementedError


class DirectorySource(FrameStream):
    """Frames stored as frames/%06d.pgm (or .png) under one directory."""

    def __init__(self, path: str | Path, fps_declared: float):
        self.path = Path(path)
        if not self.path.is_dir():
            raise FrameSourceError(f"{self.path}: not a directory")
        files: dict[int, Path] = {}
        for f in sorted(self.path.iterdir()):
            m = re.fullmatch(r"(\d{6})\.(pgm|png)", f.name)
            if m:
                files[int(m.group(1))] = f
        if not files:
            raise FrameSourceError(f"{self.path}: no frames")
        for i in range(len(files)):
            if i not in files:
                raise FrameSourceError(f"{self.path}: missing frame at index {i}")
        self._files = [files[i] for i in range(len(files))]
        self.width, self.height = image_dims(self._files[0])
        for f in self._files[1:]:
            w, h = image_dims(f)
            if (w, h) != (self.width, self.height):
                raise FrameSourceError(
                    f"{f}: dimensions {w}x{h} differ from frame 0 "
                    f"({self.width}x{self.height})"
                )
        super().__init__(list(range(len(self._files))), fps_declared)

    def _load(self, frame_index: int) -> np.ndarray:
        return load_image(self._files[frame_index])


class DownsampledStream(FrameStream):
    """Every k-th frame of a source; frame_index values kept from the source."""

    def __init__(self, source: FrameStream, keep_rate: float):
        if keep_rate > source.fps:
            raise FrameSourceError(f"keep_rate {keep_rate} exceeds source rate {source.fps}")
        stride = source.fps / keep_rate
        if abs(stride - round(stride)) > 1e-9:
            raise FrameSourceError(f"keep_rate {keep_rate} does not divide source rate {source.fps}")
        self._stride = int(round(stride))
        self._source = source
        self.width = source.width
        self.height = source.height
        kept = [source.index_at(p) for p in range(0, source.count, self._stride)]
        super().__init__(kept, keep_rate)

    def _load(self, frame_index: int) -> np.ndarray:
        return self._source._load(frame_index)


def open_directory(path: str | Path, fps_declared: float) -> DirectorySource:
    return DirectorySource(path, fps_declared)


def downsample(stream: FrameStream, keep_rate: float) -> FrameStream:
    if keep_rate == stream.fps:
        return stream
    return DownsampledStream(stream, keep_rate)


def plan_chunks(n_positions: int, chunk_frames: int) -> list[Chunk]:
    """Partition stream positions into fixed-size chunks (last may be short)."""
    if n_positions <= 0:
        raise FrameSourceError("no frames")
    if chunk_frames <= 0:
        raise ValueError("chunk_frames must be positive")
    chunks = []
    for cid, start in enumerate(range(0, n_positions, chunk_frames)):
        chunks.append(Chunk(cid, start, min(start + chunk_frames, n_positions) - 1))
    return chunks


def chunk_frame_count(cfg_chunk_frames: int, cfg_chunk_seconds: float, fps: float) -> int:
    if cfg_chunk_frames > 0:
        return cfg_chunk_frames
    return max(1, int(round(cfg_chunk_seconds * fps)))


# --- image file I/O ---------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pgm":
        return read_pgm(path)
    if path.suffix == ".png":
        return _read_png_gray(path)
    raise FrameSourceError(f"{path}: unsupported frame format")


def _parse_pgm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """Returns (width, height, maxval, pixel_offset)."""
    if not data.startswith(b"P5"):
        raise FrameSourceError(f"{path}: not a binary PGM (P5) file")
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
    pos += 1  # single whitespace after maxval
    return fields[0], fields[1], fields[2], pos


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, pos = _parse_pgm_header(data, path)
    if maxval != 255:
        raise FrameSourceError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    if pixels.size != w * h:
        raise FrameSourceError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()


def image_dims(path: str | Path) -> tuple[int, int]:
    """(width, height) from the file header, without decoding pixels."""
    path = Path(path)
    if path.suffix == ".pgm":
        with path.open("rb") as fh:
            head = fh.read(256)
        w, h, _, _ = _parse_pgm_header(head, path)
        return w, h
    if path.suffix == ".png":
        try:
            from PIL import Image
        except ImportError as e:  # pragma: no cover
            raise FrameSourceError(f"{path}: PNG support requires Pillow") from e
        with Image.open(path) as im:
            return im.size
    raise FrameSourceError(f"{path}: unsupported frame format")


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def _read_png_gray(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as e:  # pragma: no cover
        raise FrameSourceError(f"{path}: PNG support requires Pillow") from e
    with Image.open(path) as im:
        arr = np.asarray(im)
    return to_grayscale(arr)


def to_grayscale(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr.astype(np.uint8)
    rgb = arr[..., :3].astype(np.float64)
    gray = rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)
