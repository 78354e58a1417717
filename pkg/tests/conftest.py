"""Shared scenes and prebuilt indexes for the test suite."""

from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from retroquery.config import EngineConfig
from retroquery.pipeline import SourceSpec, preprocess_video
from retroquery.synth import ActorSpec, PartSpec, PathSpec, SyntheticScene


def crossing_scene(seed: int = 7) -> SyntheticScene:
    """Two textured blocks crossing with partial overlap mid-scene."""
    a = ActorSpec(
        "A",
        "car",
        (PartSpec(24, 16, texture="blocknoise", texture_seed=3, value=210, contrast=44, checker=2),),
        PathSpec("linear", x0=8, y0=40, vx=1.5),
    )
    b = ActorSpec(
        "B",
        "car",
        (PartSpec(24, 16, texture="blocknoise", texture_seed=9, value=160, contrast=44, checker=2),),
        PathSpec("linear", x0=112, y0=52, vx=-1.5),
    )
    return SyntheticScene(
        seed=seed, width=160, height=120, duration_frames=60, fps=30, actors=(a, b)
    )


def two_label_scene() -> SyntheticScene:
    """Car crossing plus a separate walker, three chunks at 60 frames."""
    car = ActorSpec(
        "car0",
        "car",
        (PartSpec(24, 16, texture="blocknoise", texture_seed=3, value=210, contrast=44, checker=2),),
        PathSpec("linear", x0=6, y0=30, vx=1.2),
        visible_from=0,
        visible_until=108,
    )
    walker = ActorSpec(
        "walk0",
        "person",
        (
            PartSpec(12, 14, texture="blocknoise", texture_seed=9, value=150, contrast=40, checker=2),
            PartSpec(10, 6, dx=1, dy=14, texture="blocknoise", texture_seed=10, value=120,
                     contrast=35, checker=2, osc_axis="x", osc_amp=2.0, osc_period=30.0),
        ),
        PathSpec("waypoints", waypoints=((0, 120.0, 80.0), (90, 30.0, 80.0), (180, 110.0, 80.0))),
    )
    return SyntheticScene(
        seed=11, width=160, height=120, duration_frames=180, fps=3, actors=(car, walker)
    )


@pytest.fixture(scope="session")
def small_cfg() -> EngineConfig:
    return EngineConfig(chunk_frames=60)


def records_from_work(work):
    """Assemble ChunkRecords from in-memory preprocessing output."""
    from retroquery.background import BackgroundEstimate
    from retroquery.index_store import ChunkRecords
    from retroquery.trajectories import chunk_features, resolve_trajectories

    resolved, trajs, chains = resolve_trajectories(work)
    blobs_by_pos = {
        work.chunk.start_pos + off: row for off, row in enumerate(resolved) if row
    }
    for c in chains:
        c.entries = [(work.chunk.start_pos + p, x, y, t) for p, x, y, t in c.entries]
    bg = BackgroundEstimate(
        np.full((1, 4), 52.0, dtype=np.float32), (2, 2), 1, (120, 160)
    )
    return ChunkRecords(work.chunk, blobs_by_pos, chains, chunk_features(trajs, resolved), bg)


@pytest.fixture(scope="session")
def small_index(tmp_path_factory, small_cfg):
    """Three-chunk index over the two-label scene, built once per session."""
    scene = two_label_scene()
    index_dir = tmp_path_factory.mktemp("small_index")
    manifest, timings = preprocess_video(
        SourceSpec("scene", scene=scene), index_dir, small_cfg, "small"
    )
    return {
        "scene": scene,
        "dir": index_dir,
        "manifest": manifest,
        "timings": timings,
        "cfg": small_cfg,
    }
