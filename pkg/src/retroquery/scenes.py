"""Built-in synthetic scenes used by the benchmarks and the test suite.

All presets follow two design rules. Actors become visible only when their
box lies fully inside the frame (no one-pixel entry slivers that morphology
would erase), and every chunk of a preset repeats the same schedule so that
chunk features are homogeneous within a regime and a cluster centroid is
genuinely representative.
"""

from __future__ import annotations

from .synth import ActorSpec, PartSpec, PathSpec, StripeSpec, SyntheticScene

WIDTH, HEIGHT = 160, 120
FPS = 3.0
CHUNK = 180  # one minute at 3 fps


def _car(actor_id: str, start: int, y: int, leftward: bool, seed: int) -> ActorSpec:
    """Rigid block crossing horizontally, fully visible for its whole life."""
    w, h = 28, 16
    span = WIDTH - w - 12  # from x=6 to x=WIDTH-w-6
    vx = 1.4 if not leftward else -1.4
    x0 = 6.0 if not leftward else float(WIDTH - w - 6)
    frames = int(span / 1.4)
    return ActorSpec(
        actor_id,
        "car",
        (PartSpec(w, h, texture="blocknoise", texture_seed=seed, value=210, contrast=44, checker=2),),
        PathSpec("linear", x0=x0 - vx * start, y0=float(y), vx=vx),
        visible_from=start,
        visible_until=start + frames,
    )


def _person(actor_id: str, start: int, end: int, y: int, seed: int, amp: float = 2.0) -> ActorSpec:
    """Mildly deforming walker: rigid torso plus legs that swing sideways."""
    torso = PartSpec(14, 16, texture="blocknoise", texture_seed=seed, value=150, contrast=40, checker=2)
    legs = PartSpec(
        12, 8, dx=1.0, dy=16.0, texture="blocknoise", texture_seed=seed + 1,
        value=120, contrast=35, checker=2,
        osc_axis="x", osc_amp=amp, osc_period=36.0,
    )
    mid = (start + end) // 2
    path = PathSpec(
        "waypoints",
        waypoints=((start, 24.0, float(y)), (mid, 116.0, float(y)), (end, 30.0, float(y))),
    )
    return ActorSpec(actor_id, "person", (torso, legs), path, visible_from=start, visible_until=end)


def benchmark(chunks: int = 10, seed: int = 11) -> SyntheticScene:
    """Ten-minute mixed scene: two car crossings and one walker per chunk."""
    actors = []
    for c in range(chunks):
        base = c * CHUNK
        actors.append(_car(f"car_a{c}", base + 5, 26, leftward=False, seed=seed + 3 * c))
        actors.append(_car(f"car_b{c}", base + 62, 70, leftward=True, seed=seed + 3 * c + 1))
        actors.append(_person(f"walker{c}", base, base + CHUNK, 94, seed=200 + 3 * c))
    return SyntheticScene(
        seed=seed, width=WIDTH, height=HEIGHT, duration_frames=chunks * CHUNK, fps=FPS,
        background_value=52, actors=tuple(actors),
    )


def rigid(seed: int = 23) -> SyntheticScene:
    """30-fps scene of rigid cars, meant to be queried at 1-fps sampling."""
    fps = 30.0
    duration = 5400  # 3 minutes
    actors = []
    for c in range(3):
        base = c * 1800
        for k, (start, y, leftward) in enumerate(
            [(base + 60, 30, False), (base + 900, 70, True)]
        ):
            w, h = 28, 16
            vx = 0.4 if not leftward else -0.4
            x0 = 6.0 if not leftward else float(WIDTH - w - 6)
            frames = int((WIDTH - w - 12) / 0.4)
            actors.append(
                ActorSpec(
                    f"car{c}_{k}",
                    "car",
                    (PartSpec(w, h, texture="blocknoise", texture_seed=seed + 5 * c + k,
                              value=210, contrast=44, checker=2),),
                    PathSpec("linear", x0=x0 - vx * start, y0=float(y), vx=vx),
                    visible_from=start,
                    visible_until=min(start + frames, duration),
                )
            )
    return SyntheticScene(
        seed=seed, width=WIDTH, height=HEIGHT, duration_frames=duration, fps=fps,
        background_value=52, actors=tuple(actors),
    )


def _deforming_walker(actor_id: str, start: int, end: int, y: float, seed: int) -> ActorSpec:
    """Strongly non-rigid walker: torso, wide-swinging legs, bobbing arms."""
    torso = PartSpec(16, 18, texture="blocknoise", texture_seed=seed, value=200, contrast=45, checker=2)
    legs = PartSpec(
        14, 10, dx=1.0, dy=18.0, texture="blocknoise", texture_seed=seed + 1,
        value=150, contrast=40, checker=2,
        osc_axis="x", osc_amp=9.0, osc_period=100.0,
    )
    arms = PartSpec(
        8, 8, dx=4.0, dy=4.0, texture="blocknoise", texture_seed=seed + 2,
        value=120, contrast=35, checker=2,
        osc_axis="y", osc_amp=5.0, osc_period=70.0,
    )
    mid = (start + end) // 2
    return ActorSpec(
        actor_id, "person", (torso, legs, arms),
        PathSpec("waypoints", waypoints=((start, 28.0, y), (mid, 112.0, y + 4.0), (end, 30.0, y))),
        visible_from=start, visible_until=end,
    )


def two_regime(seed: int = 31) -> SyntheticScene:
    """Quiet first half (gentle walker, one car), busy second half (strongly
    deforming walker, two crossing cars). Built for clustering coherence:
    within a regime chunks are near-identical, across regimes the ideal
    propagation bound differs sharply."""
    actors = []
    chunks = 10
    for c in range(chunks):
        base = c * CHUNK
        if c < chunks // 2:
            actors.append(_car(f"q_car{c}", base + 30, 26, leftward=False, seed=seed + c))
            actors.append(_person(f"q_walk{c}", base, base + CHUNK, 88, seed=200 + 2 * c, amp=1.5))
        else:
            actors.append(_car(f"b_car_a{c}", base + 5, 26, leftward=False, seed=seed + 4 * c))
            actors.append(_car(f"b_car_b{c}", base + 25, 48, leftward=True, seed=seed + 4 * c + 1))
            actors.append(_deforming_walker(f"b_walk{c}", base, base + CHUNK, 86.0, seed=300 + 4 * c))
    return SyntheticScene(
        seed=seed, width=WIDTH, height=HEIGHT, duration_frames=chunks * CHUNK, fps=FPS,
        background_value=52, actors=tuple(actors),
    )


def decay(seed: int = 47) -> SyntheticScene:
    """Strongly deforming walker for measuring propagation error growth."""
    actors = []
    for c in range(2):
        base = c * CHUNK
        actors.append(_deforming_walker(f"walker{c}", base, base + CHUNK, 40.0, seed + 3 * c))
    return SyntheticScene(
        seed=seed, width=WIDTH, height=HEIGHT, duration_frames=2 * CHUNK, fps=FPS,
        background_value=52, actors=tuple(actors),
    )


def oscillating_background(seed: int = 53) -> SyntheticScene:
    """Swaying stripe plus one crossing car: exercises multi-peak backgrounds."""
    stripe = StripeSpec(x0=100, width=6, value=185, amp=4.0, period=40.0)
    actors = (_car("car0", 30, 48, leftward=False, seed=seed),)
    return SyntheticScene(
        seed=seed, width=WIDTH, height=HEIGHT, duration_frames=3 * CHUNK, fps=FPS,
        background_value=52, stripes=(stripe,), actors=actors,
    )


PRESETS = ("benchmark", "rigid", "two_regime", "decay", "oscillating_background")


def build(name: str) -> SyntheticScene:
    if name == "benchmark":
        return benchmark()
    if name == "rigid":
        return rigid()
    if name == "two_regime":
        return two_regime()
    if name == "decay":
        return decay()
    if name == "oscillating_background":
        return oscillating_background()
    raise ValueError(f"unknown preset {name!r}")
