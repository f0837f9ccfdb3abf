"""Deterministic synthetic crowd scenes.

Two kinds of motion are generated:

* a random-waypoint crowd: agents walk at constant velocity between uniformly
  drawn waypoints, sometimes pausing, with a minimum separation enforced by
  rejecting legs that come too close to anyone already placed;
* closed-form primitives (head-on, overtake, pass-by, static group, queue)
  that run as repeated episodes on straight lanes, so their QTC streams are
  known from geometry alone.

Each primitive occupies its own lane below the crowd region.  Consecutive
episodes are separated by a one-frame gap, which makes each episode its own
track segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, UsageError
from .qtc import IMPOSSIBLE, Variant
from .trajectories import Track, TrajectorySet

CLOSED_FORM = ("head_on", "overtake", "pass_by_left", "pass_by_right", "static_group", "queue")
LANE_SPACING = 5.0
MARGIN = 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    """Scene description.

    ``n_agents`` random-waypoint agents share the region above the lanes;
    every entry of ``primitives`` adds one closed-form instance on its own
    lane.  ``arena`` is ``(x_min, y_min, x_max, y_max)`` in metres.
    """
    n_agents: int = 20
    duration: int = 5000
    rate: float = 15.0
    arena: tuple = (0.0, 0.0, 12.0, 12.0)
    seed: int = 0
    primitives: tuple = ()
    n_static: int = 0
    speed_range: tuple = (0.5, 1.5)
    pause_probability: float = 0.3
    max_pause: int = 45
    noise_std: float = 0.0
    min_separation: float = 0.05

    def __post_init__(self):
        if self.n_agents < 0 or self.duration <= 0 or self.rate <= 0 or self.n_static < 0:
            raise UsageError("agent count, duration and rate must be positive")
        if self.n_agents == 0 and not self.primitives:
            raise UsageError("scenario has no agents")
        x0, y0, x1, y1 = self.arena
        if not (x1 > x0 and y1 > y0):
            raise UsageError("arena bounds must satisfy x_min < x_max and y_min < y_max")
        for p in self.primitives:
            if p not in CLOSED_FORM:
                raise UsageError(f"unknown primitive {p!r} (expected one of {', '.join(CLOSED_FORM)})")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise UsageError("speed range must satisfy 0 < low <= high")
        if self.noise_std < 0 or self.min_separation <= 0:
            raise UsageError("noise must be non-negative and the minimum separation positive")


@dataclass(frozen=True)
class PrimitiveInstance:
    """A closed-form motion: every listed agent moves at constant velocity
    from ``starts`` during each episode."""
    kind: str
    agents: tuple
    starts: np.ndarray  # (k, 2) positions at the first frame of an episode
    velocities: np.ndarray  # (k, 2) metres per second
    episode: int  # frames per episode
    episodes: tuple  # first frame of each episode
    rate: float
    crossing: float | None = None  # frame offset of the crossing instant, if any

    def positions(self, offset) -> np.ndarray:
        """Positions ``(k, len(offset), 2)`` at frame offsets within an episode."""
        t = np.asarray(offset, dtype=float)[None, :, None] / self.rate
        return self.starts[:, None, :] + self.velocities[:, None, :] * t


@dataclass(frozen=True)
class AnalyticStream:
    frames: np.ndarray  # (T,)
    codes: np.ndarray  # (T, m)
    reliable: np.ndarray  # (T,) False within one frame of a symbol transition


# ---------------------------------------------------------------------------
# closed-form primitives


def _lane_instance(kind, index, y, x0, x1, rate, duration) -> PrimitiveInstance:
    name = f"{kind}{index}"
    usable = x1 - x0 - 2 * MARGIN
    if kind == "head_on":
        v = 1.0
        k = int((usable * rate / v - 1) // 2)  # half-frame crossing: gap = (2k + 1) v / rate
        gap = (2 * k + 1) * v / rate
        starts = [(x0 + MARGIN, y), (x0 + MARGIN + gap, y)]
        vel = [(v, 0.0), (-v, 0.0)]
        episode, crossing, agents = 2 * k + 2, k + 0.5, (f"{name}_r", f"{name}_h")
    elif kind == "overtake":
        fast, slow = 1.9, 0.3
        rel = fast - slow
        # half-frame crossing; the faster agent covers the whole lane
        k = int((usable * rate / fast - 1) // 2)
        gap = (2 * k + 1) * rel / (2 * rate)
        starts = [(x0 + MARGIN, y), (x0 + MARGIN + gap, y)]
        vel = [(fast, 0.0), (slow, 0.0)]
        episode, crossing, agents = 2 * k + 2, k + 0.5, (f"{name}_r", f"{name}_h")
    elif kind in ("pass_by_left", "pass_by_right"):
        v, lateral = 1.0, 0.8
        side = 1.0 if kind == "pass_by_left" else -1.0
        k = int((usable * rate / v - 1) // 2)
        gap = (2 * k + 1) * v / rate
        starts = [(x0 + MARGIN, y), (x0 + MARGIN + gap, y + side * lateral)]
        vel = [(v, 0.0), (-v, 0.0)]
        episode, crossing, agents = 2 * k + 2, k + 0.5, (f"{name}_r", f"{name}_h")
    elif kind == "queue":
        v, spacing = 0.8, 0.7
        starts = [(x0 + MARGIN + 2 * spacing, y), (x0 + MARGIN + spacing, y), (x0 + MARGIN, y)]
        vel = [(v, 0.0)] * 3
        episode = int((usable - 2 * spacing) / v * rate) + 1
        crossing, agents = None, (f"{name}_lead", f"{name}_mid", f"{name}_tail")
    elif kind == "static_group":
        side = 0.8
        cx = 0.5 * (x0 + x1)
        starts = [(cx, y), (cx + side, y), (cx + side / 2, y + side * math.sqrt(3) / 2)]
        vel = [(0.0, 0.0)] * 3
        episode, crossing, agents = duration, None, (f"{name}_a", f"{name}_b", f"{name}_c")
    else:  # pragma: no cover - guarded by ScenarioSpec
        raise UsageError(f"unknown primitive {kind!r}")
    if episode > duration:
        raise GenerationError(f"{kind} episode of {episode} frames does not fit in {duration} frames")
    firsts = tuple(range(0, duration - episode + 1, episode + 1))
    return PrimitiveInstance(kind, agents, np.array(starts, dtype=float), np.array(vel, dtype=float),
                             episode, firsts, rate, crossing)


def _primitive_tracks(inst: PrimitiveInstance) -> dict:
    offsets = np.arange(inst.episode)
    pos = inst.positions(offsets)
    tracks = {}
    for a, aid in enumerate(inst.agents):
        segs = [Track(f0 + offsets, pos[a]) for f0 in inst.episodes]
        if len(segs) == 1:
            tracks[aid] = segs[0]
        else:
            tracks.update({f"{aid}#{k}": s for k, s in enumerate(segs)})
    return tracks


def _pair_codes(kind, a, b, before: bool):
    """Exact symbols of the ordered pair (a, b) before/after the crossing."""
    if kind == "static_group":
        return (0, 0, 0, 0, 0, 0)
    if kind == "head_on":
        return (-1, -1, 0, 0, 0, 0) if before else (1, 1, 0, 0, 0, 0)
    if kind in ("pass_by_left", "pass_by_right"):
        # the other agent stays on the same side throughout; left is '+'
        s = 1 if kind == "pass_by_left" else -1
        return (-1, -1, s, s, 0, 0) if before else (1, 1, s, s, 0, 0)
    if kind == "overtake":
        fwd = (-1, 1, 0, 0, 1, -1) if before else (1, -1, 0, 0, 1, 1)
        return fwd if a == 0 else _swap(fwd)
    if kind == "queue":
        follow = (-1, 1, 0, 0, 0, -1)  # a behind b
        return follow if a > b else _swap(follow)
    raise UsageError(f"{kind} has no closed-form QTC stream")


def _swap(c):
    q1, q2, q3, q4, q5, q6 = c
    return (q2, q1, q4, q3, -q5, -q6)


def analytic_qtc(instance: PrimitiveInstance, variant) -> dict:
    """Exact QTC streams for every ordered agent pair of a primitive.

    Returns ``{(agent_a, agent_b): [AnalyticStream per episode]}``.
    """
    if not isinstance(instance, PrimitiveInstance) or instance.kind not in CLOSED_FORM:
        raise UsageError("analytic QTC streams exist only for closed-form primitives")
    m = Variant.parse(variant).length
    offsets = np.arange(instance.episode)
    out = {}
    n = len(instance.agents)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            streams = []
            for f0 in instance.episodes:
                if instance.crossing is None:
                    before = np.ones(len(offsets), dtype=bool)
                    reliable = np.ones(len(offsets), dtype=bool)
                else:
                    before = offsets < instance.crossing
                    reliable = np.abs(offsets - instance.crossing) > 1.0
                codes = np.array([_pair_codes(instance.kind, a, b, bool(x))[:m] for x in before], dtype=np.int8)
                streams.append(AnalyticStream(f0 + offsets, codes, reliable))
            out[(instance.agents[a], instance.agents[b])] = streams
    return out


# ---------------------------------------------------------------------------
# random-waypoint crowd


def _too_close(path, others, start, min_sep):
    if others is None or len(others) == 0:
        return False
    seg = others[:, start:start + len(path)]
    d = np.hypot(*(seg - path[None]).transpose(2, 0, 1))
    return bool(np.min(d) < min_sep)


def _crowd(spec: ScenarioSpec, region, rng, fixed) -> np.ndarray:
    """Positions ``(n_agents, duration, 2)`` of the random-waypoint agents.

    ``fixed`` holds static object positions ``(k, 2)`` to be avoided.
    """
    x0, y0, x1, y1 = region
    n, T = spec.n_agents, spec.duration
    lo, hi = spec.speed_range
    sep = spec.min_separation + 6.0 * spec.noise_std
    out = np.zeros((n, T, 2))
    static = np.repeat(fixed[:, None, :], T, axis=1) if len(fixed) else np.zeros((0, T, 2))
    for i in range(n):
        others = np.concatenate([static, out[:i]]) if (i or len(static)) else None
        for _ in range(200):
            p = rng.uniform((x0, y0), (x1, y1))
            if not _too_close(p[None], others[:, :1] if others is not None else None, 0, sep):
                break
        else:
            raise GenerationError(f"no free start position for agent {i}")
        out[i, 0] = p
        t = 0
        while t < T - 1:
            for _ in range(100):
                if rng.random() < spec.pause_probability:
                    steps = int(rng.integers(1, spec.max_pause + 1))
                    path = np.repeat(p[None], steps, axis=0)
                else:
                    target = rng.uniform((x0, y0), (x1, y1))
                    dist = float(np.hypot(*(target - p)))
                    steps = max(1, int(math.ceil(dist / rng.uniform(lo, hi) * spec.rate)))
                    frac = np.arange(1, steps + 1)[:, None] / steps
                    path = p + frac * (target - p)
                path = path[:T - 1 - t]
                if not _too_close(path, others, t + 1, sep):
                    break
            else:
                raise GenerationError(f"agent {i} cannot move without violating the minimum separation")
            out[i, t + 1:t + 1 + len(path)] = path
            t += len(path)
            p = path[-1]
    return out


def _lane_layout(spec: ScenarioSpec):
    x0, y0, x1, y1 = spec.arena
    lanes = [y0 + MARGIN + 1.0 + LANE_SPACING * i for i in range(len(spec.primitives))]
    crowd_y0 = (lanes[-1] + LANE_SPACING) if lanes else y0 + MARGIN
    region = (x0 + MARGIN, crowd_y0, x1 - MARGIN, y1 - MARGIN)
    if spec.n_agents or spec.n_static:
        if region[3] - region[1] < 1.0 or region[2] - region[0] < 1.0:
            raise GenerationError("arena too small for the lanes plus the crowd region")
        area = (region[2] - region[0]) * (region[3] - region[1])
        if (spec.n_agents + spec.n_static) * math.pi * 0.5 ** 2 > 0.5 * area:
            raise GenerationError(f"{spec.n_agents + spec.n_static} entities do not fit in {area:.1f} m^2")
    return lanes, region


def generate_scenario(spec: ScenarioSpec) -> TrajectorySet:
    rng = np.random.default_rng(spec.seed)
    lanes, region = _lane_layout(spec)
    x0, _, x1, _ = spec.arena
    agents, instances = {}, []
    for i, (kind, y) in enumerate(zip(spec.primitives, lanes)):
        inst = _lane_instance(kind, i, y, x0, x1, spec.rate, spec.duration)
        instances.append(inst)
        agents.update(_primitive_tracks(inst))
    objects = rng.uniform(region[:2], region[2:], size=(spec.n_static, 2)) if spec.n_static else np.zeros((0, 2))
    if spec.n_agents:
        crowd = _crowd(spec, region, rng, objects)
        if spec.noise_std > 0:
            crowd = crowd + rng.normal(0.0, spec.noise_std, size=crowd.shape)
            xa0, ya0, xa1, ya1 = spec.arena
            crowd = np.clip(crowd, (xa0, ya0), (xa1, ya1))
        frames = np.arange(spec.duration)
        for i in range(spec.n_agents):
            agents[f"p{i:02d}"] = Track(frames, crowd[i])
    statics = {f"obj{k}": objects[k] for k in range(spec.n_static)}
    return TrajectorySet(spec.rate, agents, statics, tuple(instances))


def min_separation(trajset: TrajectorySet) -> float:
    """Smallest distance between any two entities present at the same frame."""
    lo, hi = trajset.frame_range
    T = hi - lo + 1
    ids = list(trajset.agents) + list(trajset.static_objects)
    pos = np.full((len(ids), T, 2), np.nan)
    for k, a in enumerate(ids):
        if a in trajset.static_objects:
            pos[k] = trajset.static_objects[a]
        else:
            tr = trajset.agents[a]
            pos[k, tr.frames - lo] = tr.positions
    best = np.inf
    for k in range(len(ids) - 1):
        d = np.hypot(*(pos[k + 1:] - pos[k][None]).transpose(2, 0, 1))
        if np.any(np.isfinite(d)):
            best = min(best, float(np.nanmin(d)))
    return best


def symbol_coverage(variant=Variant.C2, instances=None) -> np.ndarray:
    """Boolean matrix ``(m, 3)``: which values of each symbol the closed-form
    primitives produce (columns are -, 0, +)."""
    m = Variant.parse(variant).length
    if instances is None:
        spec = ScenarioSpec(n_agents=0, primitives=CLOSED_FORM, duration=300, arena=(0, 0, 12, 40))
        instances = generate_scenario(spec).primitives
    cov = np.zeros((m, 3), dtype=bool)
    for inst in instances:
        for streams in analytic_qtc(inst, variant).values():
            for s in streams:
                codes = s.codes[s.reliable]
                for q in range(m):
                    vals = codes[:, q]
                    vals = vals[vals != IMPOSSIBLE]
                    cov[q, vals + 1] = True
    return cov
