"""Command-line surface: synth, preprocess, query, evaluate, report.

Exit codes: 0 ok, 2 usage, 3 input/validation, 4 internal. Errors print one
machine-readable line on stderr: ``error <code> <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, EngineConfig, load_config
from .detectors import (
    DetectorError,
    OracleDetector,
    make_detector,
    read_detections,
    write_detections,
)
from .frames import FrameSourceError, write_pgm
from .index_store import IndexStoreError, load_manifest, storage_report
from .metrics import MetricsError, binary_accuracy, count_accuracy, detection_accuracy
from .clustering import ClusterAssignment
from .pipeline import SourceSpec, preprocess_video, profile_phases
from .query import QueryError, QuerySpec, execute_query
from .synth import SceneError, SyntheticSource, read_scene, write_scene
from . import scenes as scene_presets

RESULT_MAGIC = "rqresults"
RESULT_VERSION = 1


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SceneError, FrameSourceError, IndexStoreError, DetectorError,
            MetricsError, QueryError, FileNotFoundError) as e:
        print(f"error 3 {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error 3 {e}", file=sys.stderr)
        return 3
    except Exception as e:  # pragma: no cover - internal faults
        print(f"error 4 {type(e).__name__}: {e}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retroquery", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="render a synthetic scene to frames + ground truth")
    ps.add_argument("--scene", help="scene spec file")
    ps.add_argument("--preset", choices=scene_presets.PRESETS, help="built-in scene")
    ps.add_argument("--out", required=True, help="output directory")
    ps.set_defaults(func=cmd_synth)

    pp = sub.add_parser("preprocess", help="build the index for a video")
    src = pp.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames", help="frame directory (frames/%%06d.pgm)")
    src.add_argument("--scene", help="scene spec file (rendered on the fly)")
    pp.add_argument("--fps", type=float, help="declared fps for --frames")
    pp.add_argument("--keep-rate", type=float, help="downsample to this rate")
    pp.add_argument("--index", required=True, help="index output directory")
    pp.add_argument("--config", help="config JSON file")
    pp.add_argument("--workers", type=int)
    pp.add_argument("--video-id", default="video")
    pp.set_defaults(func=cmd_preprocess)

    pq = sub.add_parser("query", help="execute a query against an index")
    pq.add_argument("--index", required=True)
    pq.add_argument("--type", required=True,
                    choices=["binary_classification", "counting", "detection"])
    pq.add_argument("--label", required=True)
    pq.add_argument("--target", type=float, required=True, help="accuracy target in (0,1]")
    pq.add_argument("--detector", required=True,
                    help="file:<path> | oracle:<scene> | noisy:<scene>[:seed=N]...")
    pq.add_argument("--out", required=True, help="result file")
    pq.add_argument("--report", help="run report JSON")
    pq.add_argument("--config", help="config JSON file")
    pq.set_defaults(func=cmd_query)

    pe = sub.add_parser("evaluate", help="score a result file against truth detections")
    pe.add_argument("--results", required=True)
    pe.add_argument("--truth", required=True, help="detection wire file")
    pe.add_argument("--iou", type=float, default=0.5)
    pe.add_argument("--out", help="write the report JSON here (default stdout)")
    pe.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("report", help="storage and clustering summary for an index")
    pr.add_argument("--index", required=True)
    pr.set_defaults(func=cmd_report)
    return p


def cmd_synth(args) -> int:
    if bool(args.scene) == bool(args.preset):
        print("error 2 exactly one of --scene/--preset is required", file=sys.stderr)
        return 2
    scene = read_scene(args.scene) if args.scene else scene_presets.build(args.preset)
    out = Path(args.out)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    source = SyntheticSource(scene)
    for pos in range(source.count):
        f = source.read_position(pos)
        write_pgm(frames_dir / f"{f.frame_index:06d}.pgm", f.pixels)
    write_scene(out / "scene.txt", scene)
    oracle = OracleDetector(scene)
    by_frame = {t: oracle.detect(t) for t in range(scene.duration_frames)}
    write_detections(out / "truth.txt", by_frame, meta={"scene": "synthetic", "fps": scene.fps})
    print(f"wrote {source.count} frames, scene.txt, truth.txt under {out}")
    return 0


def _engine_config(args) -> EngineConfig:
    overrides = {}
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    return load_config(args.config, overrides) if (args.config or overrides) else EngineConfig()


def cmd_preprocess(args) -> int:
    cfg = _engine_config(args)
    if args.frames:
        if not args.fps:
            print("error 2 --fps is required with --frames", file=sys.stderr)
            return 2
        spec = SourceSpec("dir", path=args.frames, fps=args.fps, keep_rate=args.keep_rate)
    else:
        spec = SourceSpec("scene", scene=read_scene(args.scene), keep_rate=args.keep_rate)
    manifest, timings = preprocess_video(spec, args.index, cfg, args.video_id,
                                         workers=cfg.workers)
    report = {
        "video_id": manifest.video_id,
        "frames": manifest.frame_count,
        "chunks": len(manifest.chunks),
        "config_fingerprint": manifest.config_fingerprint,
        "config": cfg.to_dict(),
        "phase_seconds": {k: round(v, 4) for k, v in timings.items()},
        "phase_shares": {k: round(v, 4) for k, v in profile_phases(timings).items()},
    }
    (Path(args.index) / "timings.json").write_text(json.dumps(report, indent=1) + "\n")
    print(json.dumps(report, indent=1))
    return 0


def cmd_query(args) -> int:
    if not (0.0 < args.target <= 1.0):
        print(f"error 2 --target {args.target} outside (0,1]", file=sys.stderr)
        return 2
    cfg = _engine_config(args)
    manifest = load_manifest(args.index)
    if args.config and manifest.config_fingerprint != cfg.fingerprint():
        print("error 3 config fingerprint differs from the index", file=sys.stderr)
        return 3
    cfg = load_config(None, manifest.config)  # run with the index's own config
    detector = make_detector(args.detector, frame_size=(manifest.width, manifest.height))
    assignment = ClusterAssignment.from_dict(manifest.clustering)
    query = QuerySpec(args.type, args.label, args.target, detector.detector_id)
    timings: dict[str, float] = {}
    result = execute_query(args.index, manifest, assignment, query, detector, cfg, timings)
    _write_results(args.out, result, manifest)
    report = {
        "query": {"type": args.type, "label": args.label, "target": args.target,
                  "detector": detector.detector_id},
        "invoked_frames": result.invocations,
        "invoked_fraction": round(result.invoked_fraction, 4),
        "per_cluster_max_distance": result.per_cluster_max_distance,
        "phase_seconds": {k: round(v, 4) for k, v in timings.items()},
        "frames": len(result.frames),
        "config_fingerprint": manifest.config_fingerprint,
        "config": cfg.to_dict(),
    }
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=1) + "\n")
    print(json.dumps(report, indent=1))
    return 0


def _write_results(path, result, manifest) -> None:
    q = result.query
    lines = [f"{RESULT_MAGIC} {RESULT_VERSION}"]
    lines.append(f"# query type={q.query_type} label={q.target_label} target={q.accuracy_target}")
    lines.append(f"# detector {q.detector_id}")
    lines.append(f"# config {manifest.config_fingerprint}")
    md = " ".join(f"{c}:{m}" for c, m in sorted(result.per_cluster_max_distance.items()))
    lines.append(f"# cluster_max_distance {md}")
    lines.append(f"# invoked_fraction {result.invoked_fraction:.6f}")
    for frame in result.frames:
        payload = result.payload[frame]
        if q.query_type == "binary_classification":
            body = "1" if payload else "0"
        elif q.query_type == "counting":
            body = str(payload)
        else:
            body = ";".join(
                f"{score:.4g}:{b[0]:.2f}:{b[1]:.2f}:{b[2]:.2f}:{b[3]:.2f}"
                for b, score in payload
            )
        lines.append(f"{frame}|{body}|{result.provenance[frame]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results(path) -> tuple[dict, dict[int, object], dict[int, str]]:
    """Parse a result file into (meta, payload-by-frame, provenance-by-frame)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(f"{RESULT_MAGIC} "):
        raise ValueError(f"{path}: not a result file")
    meta: dict = {}
    payload: dict[int, object] = {}
    prov: dict[int, str] = {}
    qtype = ""
    for line in lines[1:]:
        if line.startswith("# query "):
            for tok in line[8:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
            qtype = meta.get("type", "")
        elif line.startswith("#") or not line:
            continue
        else:
            frame_s, body, p = line.split("|")
            frame = int(frame_s)
            prov[frame] = p
            if qtype == "binary_classification":
                payload[frame] = body == "1"
            elif qtype == "counting":
                payload[frame] = int(body)
            else:
                boxes = []
                if body:
                    for tok in body.split(";"):
                        score_s, x1, y1, x2, y2 = tok.split(":")
                        boxes.append(
                            ((float(x1), float(y1), float(x2), float(y2)), float(score_s))
                        )
                payload[frame] = boxes
    return meta, payload, prov


def cmd_evaluate(args) -> int:
    meta, payload, _prov = read_results(args.results)
    qtype = meta.get("type")
    label = meta.get("label")
    truth_all = read_detections(args.truth)
    missing = sorted(set(payload) - set(truth_all))
    if missing:
        raise MetricsError(f"truth file lacks frames {missing[:3]}...")
    truth_dets = {
        f: [d for d in truth_all[f] if d.label == label] for f in payload
    }
    if qtype == "binary_classification":
        report = binary_accuracy(payload, {f: len(v) > 0 for f, v in truth_dets.items()})
    elif qtype == "counting":
        report = count_accuracy(payload, {f: len(v) for f, v in truth_dets.items()})
    elif qtype == "detection":
        report = detection_accuracy(
            payload, {f: [d.box for d in v] for f, v in truth_dets.items()}, args.iou
        )
    else:
        raise MetricsError(f"result file has unknown query type {qtype!r}")
    out = {
        "query_type": report.query_type,
        "label": label,
        "frames": len(report.frames),
        "average_accuracy": round(report.average, 6),
    }
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    manifest = load_manifest(args.index)
    storage = storage_report(args.index)
    clustering = manifest.clustering or {}
    out = {
        "video_id": manifest.video_id,
        "frames": manifest.frame_count,
        "chunks": len(manifest.chunks),
        "storage_bytes": storage,
        "clustering": {
            "k": clustering.get("k"),
            "labels": clustering.get("labels"),
            "centroid_chunks": clustering.get("centroid_chunks"),
        },
    }
    print(json.dumps(out, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
