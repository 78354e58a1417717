"""Deterministic synthetic scenes with exact ground truth.

Scenes are built from a static background (plus optional oscillating
stripes) and textured actors made of one or more parts. Every part follows
an integer-rounded path, so rendering is reproducible bit-for-bit from the
scene spec alone and each actor's tight bounding box is known analytically.

Box convention used across the engine: (x1, y1, x2, y2) with inclusive
integer pixel corners; overlap arithmetic treats them as continuous
rectangles of width x2-x1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames import FrameStream


class SceneError(ValueError):
    pass


SCENE_MAGIC = "retroscene"
SCENE_VERSION = 1


@dataclass(frozen=True)
class PathSpec:
    kind: str  # "linear" | "waypoints"
    x0: float = 0.0
    y0: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    waypoints: tuple[tuple[int, float, float], ...] = ()

    def at(self, t: int) -> tuple[float, float]:
        if self.kind == "linear":
            return self.x0 + self.vx * t, self.y0 + self.vy * t
        pts = self.waypoints
        if t <= pts[0][0]:
            return pts[0][1], pts[0][2]
        if t >= pts[-1][0]:
            return pts[-1][1], pts[-1][2]
        for (f0, x0, y0), (f1, x1, y1) in zip(pts, pts[1:]):
            if f0 <= t <= f1:
                if f1 == f0:
                    return x1, y1
                a = (t - f0) / (f1 - f0)
                return x0 + a * (x1 - x0), y0 + a * (y1 - y0)
        raise SceneError("waypoints not ordered")


@dataclass(frozen=True)
class ScaleSpec:
    kind: str = "const"  # "const" | "sine"
    base: float = 1.0
    amp: float = 0.0
    period: float = 1.0
    phase: float = 0.0

    def at(self, t: int) -> float:
        if self.kind == "const":
            return self.base
        return self.base + self.amp * math.sin(2.0 * math.pi * t / self.period + self.phase)


@dataclass(frozen=True)
class PartSpec:
    width: int
    height: int
    dx: float = 0.0
    dy: float = 0.0
    texture: str = "noise"  # "noise" | "checker" | "flat"
    texture_seed: int = 0
    value: int = 200
    contrast: int = 40
    checker: int = 4  # checker cell size in px
    osc_axis: str = "none"  # "none" | "x" | "y"
    osc_amp: float = 0.0
    osc_period: float = 1.0
    osc_phase: float = 0.0

    def offset(self, t: int) -> tuple[float, float]:
        dx, dy = self.dx, self.dy
        if self.osc_axis != "none":
            w = self.osc_amp * math.sin(2.0 * math.pi * t / self.osc_period + self.osc_phase)
            if self.osc_axis == "x":
                dx += w
            else:
                dy += w
        return dx, dy


@dataclass(frozen=True)
class ActorSpec:
    actor_id: str
    label: str
    parts: tuple[PartSpec, ...]
    path: PathSpec
    visible_from: int = 0
    visible_until: int = 1 << 60  # exclusive
    scale: ScaleSpec = field(default_factory=ScaleSpec)


@dataclass(frozen=True)
class StripeSpec:
    """Vertical stripe whose x position oscillates: periodic background motion."""

    x0: int
    width: int
    value: int
    amp: float = 0.0
    period: float = 1.0
    phase: float = 0.0

    def left(self, t: int) -> int:
        return int(round(self.x0 + self.amp * math.sin(2.0 * math.pi * t / self.period + self.phase)))


@dataclass(frozen=True)
class SyntheticScene:
    seed: int
    width: int
    height: int
    duration_frames: int
    fps: float
    background_value: int = 52
    stripes: tuple[StripeSpec, ...] = ()
    actors: tuple[ActorSpec, ...] = ()


@dataclass(frozen=True)
class GTBox:
    actor_id: str
    label: str
    box: tuple[int, int, int, int]  # inclusive corners, clipped to frame


class GroundTruth:
    """Per-frame visible actors with tight boxes, derived from the scene."""

    def __init__(self, scene: SyntheticScene):
        self.scene = scene

    def boxes(self, frame_index: int) -> list[GTBox]:
        out = []
        for actor in self.scene.actors:
            box = actor_box(self.scene, actor, frame_index)
            if box is not None:
                out.append(GTBox(actor.actor_id, actor.label, box))
        return out

    def labels(self) -> list[str]:
        return sorted({a.label for a in self.scene.actors})


def _part_rect(
    scene: SyntheticScene, actor: ActorSpec, part: PartSpec, t: int
) -> tuple[int, int, int, int] | None:
    """Unclipped integer placement of one part: (x, y, w, h)."""
    s = actor.scale.at(t)
    pw = int(round(part.width * s))
    ph = int(round(part.height * s))
    if pw < 1 or ph < 1:
        raise SceneError(f"actor {actor.actor_id}: zero-area part at frame {t} (scale {s:.3f})")
    ax, ay = actor.path.at(t)
    dx, dy = part.offset(t)
    x = int(round(ax + dx))
    y = int(round(ay + dy))
    return x, y, pw, ph


def actor_box(scene: SyntheticScene, actor: ActorSpec, t: int) -> tuple[int, int, int, int] | None:
    """Tight box of the actor's rendered pixels on frame t, or None if hidden."""
    if not (actor.visible_from <= t < actor.visible_until):
        return None
    x1 = y1 = 1 << 60
    x2 = y2 = -(1 << 60)
    for part in actor.parts:
        x, y, pw, ph = _part_rect(scene, actor, part, t)
        cx1, cy1 = max(x, 0), max(y, 0)
        cx2, cy2 = min(x + pw - 1, scene.width - 1), min(y + ph - 1, scene.height - 1)
        if cx1 > cx2 or cy1 > cy2:
            continue  # part fully outside
        x1, y1 = min(x1, cx1), min(y1, cy1)
        x2, y2 = max(x2, cx2), max(y2, cy2)
    if x2 < x1:
        return None
    return (x1, y1, x2, y2)


class SyntheticSource(FrameStream):
    """Renders scene frames on demand; iteration is pure."""

    def __init__(self, scene: SyntheticScene):
        if scene.duration_frames <= 0:
            raise SceneError("scene has no frames")
        self.scene = scene
        self.width = scene.width
        self.height = scene.height
        self._textures = {
            (ai, pi): _make_texture(part, scene.seed)
            for ai, actor in enumerate(scene.actors)
            for pi, part in enumerate(actor.parts)
        }
        super().__init__(list(range(scene.duration_frames)), scene.fps)

    def _load(self, frame_index: int) -> np.ndarray:
        return self.render(frame_index)

    def render(self, t: int, background_only: bool = False) -> np.ndarray:
        scene = self.scene
        canvas = np.full((scene.height, scene.width), scene.background_value, dtype=np.uint8)
        for stripe in scene.stripes:
            left = stripe.left(t)
            lo, hi = max(left, 0), min(left + stripe.width, scene.width)
            if lo < hi:
                canvas[:, lo:hi] = stripe.value
        if background_only:
            return canvas
        for ai, actor in enumerate(scene.actors):
            if not (actor.visible_from <= t < actor.visible_until):
                continue
            for pi, part in enumerate(actor.parts):
                x, y, pw, ph = _part_rect(scene, actor, part, t)
                tex = self._textures[(ai, pi)]
                if tex.shape != (ph, pw):
                    ry = (np.arange(ph) * tex.shape[0] // ph).clip(0, tex.shape[0] - 1)
                    rx = (np.arange(pw) * tex.shape[1] // pw).clip(0, tex.shape[1] - 1)
                    tex = tex[np.ix_(ry, rx)]
                cx1, cy1 = max(x, 0), max(y, 0)
                cx2, cy2 = min(x + pw, scene.width), min(y + ph, scene.height)
                if cx1 >= cx2 or cy1 >= cy2:
                    continue
                canvas[cy1:cy2, cx1:cx2] = tex[cy1 - y : cy2 - y, cx1 - x : cx2 - x]
        return canvas


def _make_texture(part: PartSpec, scene_seed: int) -> np.ndarray:
    h, w = part.height, part.width
    if part.texture == "flat":
        return np.full((h, w), np.uint8(part.value))
    if part.texture == "checker":
        yy, xx = np.mgrid[0:h, 0:w]
        cells = ((yy // part.checker) + (xx // part.checker)) % 2
        lo = max(0, part.value - part.contrast)
        hi = min(255, part.value + part.contrast)
        return np.where(cells == 0, np.uint8(lo), np.uint8(hi))
    if part.texture == "noise":
        rng = np.random.default_rng((scene_seed, part.texture_seed))
        lo = max(0, part.value - part.contrast)
        hi = min(255, part.value + part.contrast)
        return rng.integers(lo, hi + 1, size=(h, w), dtype=np.int64).astype(np.uint8)
    if part.texture == "blocknoise":
        rng = np.random.default_rng((scene_seed, part.texture_seed))
        lo = max(0, part.value - part.contrast)
        hi = min(255, part.value + part.contrast)
        cell = max(1, part.checker)
        gh, gw = (h + cell - 1) // cell, (w + cell - 1) // cell
        grid = rng.integers(lo, hi + 1, size=(gh, gw), dtype=np.int64)
        return np.repeat(np.repeat(grid, cell, axis=0), cell, axis=1)[:h, :w].astype(np.uint8)
    raise SceneError(f"unknown texture {part.texture!r}")


def render_synthetic(scene: SyntheticScene) -> tuple[SyntheticSource, GroundTruth]:
    source = SyntheticSource(scene)
    # validate part areas across the whole run up front
    for actor in scene.actors:
        for t in (actor.visible_from, min(actor.visible_until, scene.duration_frames) - 1):
            if 0 <= t < scene.duration_frames:
                for part in actor.parts:
                    _part_rect(scene, actor, part, t)
    return source, GroundTruth(scene)


# --- scene spec files --------------------------------------------------------


def write_scene(path: str | Path, scene: SyntheticScene) -> None:
    lines = [f"{SCENE_MAGIC} {SCENE_VERSION}"]
    lines.append(
        "scene "
        + _kv(
            seed=scene.seed,
            width=scene.width,
            height=scene.height,
            frames=scene.duration_frames,
            fps=scene.fps,
            bg=scene.background_value,
        )
    )
    for s in scene.stripes:
        lines.append(
            "stripe "
            + _kv(x0=s.x0, width=s.width, value=s.value, amp=s.amp, period=s.period, phase=s.phase)
        )
    for a in scene.actors:
        lines.append(
            f"actor id={a.actor_id} label={a.label} from={a.visible_from} until={a.visible_until}"
        )
        p = a.path
        if p.kind == "linear":
            lines.append("path " + _kv(kind="linear", x0=p.x0, y0=p.y0, vx=p.vx, vy=p.vy))
        else:
            pts = ",".join(f"{f}:{x}:{y}" for f, x, y in p.waypoints)
            lines.append("path " + _kv(kind="waypoints", pts=pts))
        sc = a.scale
        lines.append(
            "scale " + _kv(kind=sc.kind, base=sc.base, amp=sc.amp, period=sc.period, phase=sc.phase)
        )
        for part in a.parts:
            lines.append(
                "part "
                + _kv(
                    w=part.width,
                    h=part.height,
                    dx=part.dx,
                    dy=part.dy,
                    texture=part.texture,
                    seed=part.texture_seed,
                    value=part.value,
                    contrast=part.contrast,
                    checker=part.checker,
                    osc=part.osc_axis,
                    amp=part.osc_amp,
                    period=part.osc_period,
                    phase=part.osc_phase,
                )
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scene(path: str | Path) -> SyntheticScene:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SceneError(f"{path}: empty scene file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != SCENE_MAGIC:
        raise SceneError(f"{path}: not a scene file (bad header {lines[0]!r})")
    if int(head[1]) != SCENE_VERSION:
        raise SceneError(f"{path}: unsupported scene version {head[1]}")

    scene_kv: dict[str, str] = {}
    stripes: list[StripeSpec] = []
    actors: list[dict] = []
    for ln in lines[1:]:
        kind, _, rest = ln.partition(" ")
        kv = _parse_kv(rest, path)
        if kind == "scene":
            scene_kv = kv
        elif kind == "stripe":
            stripes.append(
                StripeSpec(
                    x0=int(kv["x0"]),
                    width=int(kv["width"]),
                    value=int(kv["value"]),
                    amp=float(kv.get("amp", 0)),
                    period=float(kv.get("period", 1)),
                    phase=float(kv.get("phase", 0)),
                )
            )
        elif kind == "actor":
            actors.append(
                {
                    "actor_id": kv["id"],
                    "label": kv["label"],
                    "visible_from": int(kv.get("from", 0)),
                    "visible_until": int(kv.get("until", 1 << 60)),
                    "parts": [],
                    "path": None,
                    "scale": ScaleSpec(),
                }
            )
        elif kind in ("path", "scale", "part"):
            if not actors:
                raise SceneError(f"{path}: {kind} line before any actor")
            cur = actors[-1]
            if kind == "path":
                if kv["kind"] == "linear":
                    cur["path"] = PathSpec(
                        "linear",
                        x0=float(kv["x0"]),
                        y0=float(kv["y0"]),
                        vx=float(kv.get("vx", 0)),
                        vy=float(kv.get("vy", 0)),
                    )
                elif kv["kind"] == "waypoints":
                    pts = tuple(
                        (int(p.split(":")[0]), float(p.split(":")[1]), float(p.split(":")[2]))
                        for p in kv["pts"].split(",")
                    )
                    cur["path"] = PathSpec("waypoints", waypoints=pts)
                else:
                    raise SceneError(f"{path}: unknown path kind {kv['kind']!r}")
            elif kind == "scale":
                cur["scale"] = ScaleSpec(
                    kind=kv.get("kind", "const"),
                    base=float(kv.get("base", 1)),
                    amp=float(kv.get("amp", 0)),
                    period=float(kv.get("period", 1)),
                    phase=float(kv.get("phase", 0)),
                )
            else:
                cur["parts"].append(
                    PartSpec(
                        width=int(kv["w"]),
                        height=int(kv["h"]),
                        dx=float(kv.get("dx", 0)),
                        dy=float(kv.get("dy", 0)),
                        texture=kv.get("texture", "noise"),
                        texture_seed=int(kv.get("seed", 0)),
                        value=int(kv.get("value", 200)),
                        contrast=int(kv.get("contrast", 40)),
                        checker=int(kv.get("checker", 4)),
                        osc_axis=kv.get("osc", "none"),
                        osc_amp=float(kv.get("amp", 0)),
                        osc_period=float(kv.get("period", 1)),
                        osc_phase=float(kv.get("phase", 0)),
                    )
                )
        else:
            raise SceneError(f"{path}: unknown record kind {kind!r}")

    if not scene_kv:
        raise SceneError(f"{path}: missing scene line")
    for a in actors:
        if a["path"] is None:
            raise SceneError(f"{path}: actor {a['actor_id']} has no path")
        if not a["parts"]:
            raise SceneError(f"{path}: actor {a['actor_id']} has no parts")
        a["parts"] = tuple(a["parts"])
    return SyntheticScene(
        seed=int(scene_kv["seed"]),
        width=int(scene_kv["width"]),
        height=int(scene_kv["height"]),
        duration_frames=int(scene_kv["frames"]),
        fps=float(scene_kv["fps"]),
        background_value=int(scene_kv.get("bg", 52)),
        stripes=tuple(stripes),
        actors=tuple(ActorSpec(**a) for a in actors),
    )


def _kv(**kw) -> str:
    parts = []
    for k, v in kw.items():
        if isinstance(v, float):
            v = repr(v)  # shortest exact round-trip form
        parts.append(f"{k}={v}")
    return " ".join(parts)


def _parse_kv(rest: str, path) -> dict[str, str]:
    kv = {}
    for tok in rest.split():
        if "=" not in tok:
            raise SceneError(f"{path}: malformed token {tok!r}")
        k, _, v = tok.partition("=")
        kv[k] = v
    return kv
