"""Engine configuration: every tunable lives here, with one fingerprint.

The fingerprint covers only parameters that influence persisted index
content, so an index can be safely reused as long as the preprocessing
knobs are unchanged.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class EngineConfig:
    # chunking
    chunk_seconds: float = 60.0
    chunk_frames: int = 0  # >0 overrides chunk_seconds * fps

    # background estimation
    bin_width: int = 8  # intensity levels per histogram bin (32 bins)
    peak_fraction: float = 0.25
    peak_bin_drift: int = 1  # same-peak identity across windows = same bin +/- drift
    region_size: int = 1
    extension_chunks: int = 1  # neighbor chunks folded in per window extension

    # segmentation / blobs
    segment_tolerance: float = 0.05  # fraction of the 0-255 range
    open_radius: int = 1
    close_radius: int = 2
    min_blob_area: int = 16

    # keypoints
    kp_octaves: int = 3
    kp_contrast_threshold: float = 0.015
    kp_edge_ratio: float = 10.0
    kp_max_per_frame: int = 800
    kp_match_ratio: float = 0.75

    # trajectories
    min_support: int = 3
    max_passes: int = 8

    # chunk clustering
    cluster_coverage: float = 0.02
    cluster_seed: int = 13
    kmeans_max_iter: int = 100

    # query execution
    max_distance_grid: tuple[int, ...] = (0, 1, 2, 4, 8, 15, 30, 60, 120, 240, 450, 900)
    min_anchor_keypoints: int = 2
    place_max_iter: int = 200
    place_tolerance: float = 1e-8
    iou_threshold: float = 0.5

    # orchestration
    workers: int = 1

    def fingerprint(self) -> str:
        """Hash of the parameters that shape persisted index content."""
        keys = _INDEX_KEYS
        payload = {k: getattr(self, k) for k in keys}
        blob = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def replace(self, **kw) -> "EngineConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["max_distance_grid"] = list(self.max_distance_grid)
        return d


_INDEX_KEYS = (
    "chunk_seconds",
    "chunk_frames",
    "bin_width",
    "peak_fraction",
    "peak_bin_drift",
    "region_size",
    "extension_chunks",
    "segment_tolerance",
    "open_radius",
    "close_radius",
    "min_blob_area",
    "kp_octaves",
    "kp_contrast_threshold",
    "kp_edge_ratio",
    "kp_max_per_frame",
    "kp_match_ratio",
    "min_support",
    "max_passes",
    "cluster_coverage",
    "cluster_seed",
    "kmeans_max_iter",
)


class ConfigError(ValueError):
    pass


def load_config(path: str | Path | None, overrides: dict | None = None) -> EngineConfig:
    """Build a config from an optional JSON file plus explicit overrides."""
    data: dict = {}
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: expected a JSON object")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "max_distance_grid" in data:
        data["max_distance_grid"] = tuple(int(v) for v in data["max_distance_grid"])
    cfg = EngineConfig(**data)
    _validate(cfg)
    return cfg


def _validate(cfg: EngineConfig) -> None:
    if not (0 < cfg.peak_fraction <= 1):
        raise ConfigError("peak_fraction must be in (0, 1]")
    if not (0 < cfg.cluster_coverage <= 1):
        raise ConfigError("cluster_coverage must be in (0, 1]")
    if cfg.bin_width <= 0 or 256 % cfg.bin_width:
        raise ConfigError("bin_width must divide 256")
    if cfg.segment_tolerance < 0:
        raise ConfigError("segment_tolerance must be >= 0")
    if cfg.min_support < 1:
        raise ConfigError("min_support must be >= 1")
    if any(d < 0 for d in cfg.max_distance_grid) or 0 not in cfg.max_distance_grid:
        raise ConfigError("max_distance_grid must be nonnegative and contain 0")
