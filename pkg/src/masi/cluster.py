"""Radial clustering around each agent and fixed-size windowed samples.

A window of ``t_history + t_future`` frames is slid over every center agent's
track.  Its members are all other agents and static objects that come within
``radius`` of the center at some step of the window.  Every sample has
``n_star`` slots; unused slots are fake (impossible index, all-false mask).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .qtc import DEFAULT_TOLERANCE, Dictionary, ToleranceSet, Variant, pair_series
from .trajectories import TrajectorySet


class Framework(enum.Enum):
    QTC4 = "qtc4"
    QTC6 = "qtc6"
    TS = "ts"

    @classmethod
    def parse(cls, value) -> "Framework":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "").replace("^", "")
        aliases = {"qtc4": cls.QTC4, "fqtc4": cls.QTC4, "qtc6": cls.QTC6, "fqtc6": cls.QTC6,
                   "ts": cls.TS, "fts": cls.TS, "metric": cls.TS}
        if key not in aliases:
            raise UsageError(f"unknown framework {value!r} (expected qtc4, qtc6 or ts)")
        return aliases[key]

    @property
    def symbolic(self) -> bool:
        return self is not Framework.TS

    @property
    def qtc_variant(self) -> Variant | None:
        return {Framework.QTC4: Variant.C1, Framework.QTC6: Variant.C2}.get(self)


@dataclass(frozen=True)
class ClusterConfig:
    radius: float = 1.2
    t_history: int = 10
    t_future: int = 48
    stride: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise UsageError("radius must be positive")
        if self.t_history < 2 or self.t_future < 1 or self.stride < 1:
            raise UsageError("need t_history >= 2, t_future >= 1 and stride >= 1")

    @property
    def window(self) -> int:
        return self.t_history + self.t_future


def distance(a, b):
    """Euclidean distance along the last axis; the one formula used for radius tests."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return np.hypot(d[..., 0], d[..., 1])


@dataclass
class CenterMembership:
    center: str
    frames: np.ndarray  # (T,) the center segment's frames
    entities: tuple  # candidate member ids
    positions: np.ndarray  # (E, T, 2) world positions, 0 where absent
    present: np.ndarray  # (E, T) entity exists at the frame
    inside: np.ndarray  # (E, T) present and within the radius


@dataclass
class Memberships:
    config: ClusterConfig
    rate: float
    centers: dict = field(default_factory=dict)  # center id -> CenterMembership

    def windows(self, center):
        """Start offsets of the windows that fit inside the center's track."""
        cm = self.centers[center]
        W = self.config.window
        return range(0, len(cm.frames) - W + 1, self.config.stride)

    def window_members(self, center, offset) -> list[int]:
        cm = self.centers[center]
        sl = slice(offset, offset + self.config.window)
        return list(np.nonzero(cm.inside[:, sl].any(axis=1))[0])


def build_clusters(trajectories: TrajectorySet, config: ClusterConfig) -> Memberships:
    """Per-frame radius membership of every entity around every agent."""
    if not trajectories.agents:
        raise UsageError("empty trajectory set")
    out = Memberships(config, trajectories.rate)
    static_ids = tuple(trajectories.static_objects)
    for cid, ctrack in trajectories.agents.items():
        T = len(ctrack)
        others = [a for a, tr in trajectories.agents.items()
                  if a != cid and tr.start <= ctrack.end and tr.end >= ctrack.start]
        entities = tuple(others) + static_ids
        pos = np.zeros((len(entities), T, 2))
        present = np.zeros((len(entities), T), dtype=bool)
        for e, eid in enumerate(entities):
            if eid in trajectories.static_objects:
                pos[e] = trajectories.static_objects[eid]
                present[e] = True
                continue
            tr = trajectories.agents[eid]
            lo, hi = max(tr.start, ctrack.start), min(tr.end, ctrack.end)
            pos[e, lo - ctrack.start:hi - ctrack.start + 1] = tr.positions[lo - tr.start:hi - tr.start + 1]
            present[e, lo - ctrack.start:hi - ctrack.start + 1] = True
        inside = present & (distance(ctrack.positions[None], pos) <= config.radius)
        out.centers[cid] = CenterMembership(cid, ctrack.frames, entities, pos, present, inside)
    return out


def compute_n_star(memberships: Memberships) -> int:
    """Largest number of distinct members in any window."""
    if not memberships.centers:
        raise UsageError("no clusters")
    best = 0
    W = memberships.config.window
    for cid, cm in memberships.centers.items():
        if not cm.entities:
            continue
        starts = memberships.windows(cid)
        if len(starts) == 0:
            continue
        # sliding "any" over the window via cumulative counts
        csum = np.concatenate([np.zeros((len(cm.entities), 1), int), np.cumsum(cm.inside, axis=1)], axis=1)
        s = np.asarray(starts)
        hits = (csum[:, s + W] - csum[:, s]) > 0
        best = max(best, int(hits.sum(axis=0).max()))
    return best


@dataclass(eq=False)
class ClusterSample:
    """One centered window.

    Step axis has ``t_history + t_future`` entries: history first, then labels.
    ``indices`` holds dictionary indices for a symbolic framework.  For the
    coordinate framework ``qtc_indices`` maps 4 and 6 to the label streams of
    both QTC variants.
    """
    center: str
    window_start: int
    members: tuple  # real member ids, in slot order
    t_history: int
    world: np.ndarray  # (n*, W, 2) member world positions, 0 where absent
    present: np.ndarray  # (n*, W) member exists
    mask: np.ndarray  # (n*, W) member exists and is inside the radius
    center_track: np.ndarray  # (W, 2)
    indices: np.ndarray | None = None  # (n*, W)
    qtc_indices: dict = field(default_factory=dict)

    @property
    def n_star(self) -> int:
        return self.world.shape[0]

    @property
    def window(self) -> int:
        return self.world.shape[1]

    @property
    def t_future(self) -> int:
        return self.window - self.t_history

    @property
    def origin(self) -> np.ndarray:
        return self.center_track[self.t_history - 1]

    def relative(self) -> np.ndarray:
        """Center plus member coordinates relative to ``origin``: ``(n*+1, W, 2)``.

        Steps where a member is absent (and fake slots) hold the origin
        sentinel ``(0, 0)``.  Present members outside the radius keep their
        coordinates.
        """
        rel = np.where(self.present[..., None], self.world - self.origin, 0.0)
        return np.concatenate([(self.center_track - self.origin)[None], rel], axis=0)

    def history(self) -> np.ndarray:
        return self.indices[:, :self.t_history]

    def labels(self) -> np.ndarray:
        return self.indices[:, self.t_history:]

    def __eq__(self, other):
        if not isinstance(other, ClusterSample):
            return NotImplemented
        same = (self.center == other.center and self.window_start == other.window_start
                and self.members == other.members and self.t_history == other.t_history)
        arrays = ("world", "present", "mask", "center_track", "indices")
        same = same and all(_arr_eq(getattr(self, a), getattr(other, a)) for a in arrays)
        return same and self.qtc_indices.keys() == other.qtc_indices.keys() and all(
            np.array_equal(self.qtc_indices[k], other.qtc_indices[k]) for k in self.qtc_indices)


def _arr_eq(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


class _PairCodes:
    """QTC codes between a center and one entity for every window.

    Interior window steps equal the codes over the whole center track.  The
    first and last steps of a window only see neighbours inside the window,
    so they are precomputed separately from two-frame slices.
    """

    def __init__(self, center_pos, ent_pos, ent_present, rate, variant, tol):
        T = len(center_pos)
        ones = np.ones(T, dtype=bool)
        self.full = pair_series(center_pos, ent_pos, ones, ent_present, rate, variant, tol, degenerate="zero")
        pairs = np.arange(T - 1)[None] + np.arange(2)[:, None]  # (2, T-1) two-frame slices
        edges = pair_series(center_pos[pairs], ent_pos[pairs], np.ones(pairs.shape, dtype=bool),
                            ent_present[pairs], rate, variant, tol, degenerate="zero")
        self.first = edges[0]  # window starting at t
        self.last = edges[1]  # window ending at t + 1

    def window(self, offset, W):
        codes = self.full[offset:offset + W].copy()
        codes[0] = self.first[offset]
        codes[W - 1] = self.last[offset + W - 2]
        return codes


def assemble_samples(memberships: Memberships, trajectories: TrajectorySet, dictionary, framework,
                     config: ClusterConfig | None = None, n_star: int | None = None,
                     tolerance: ToleranceSet = DEFAULT_TOLERANCE) -> list[ClusterSample]:
    """Windowed samples for every center agent, in (center, window) order.

    ``dictionary`` is a single :class:`Dictionary` for a symbolic framework,
    or a mapping ``{4: dict_c1, 6: dict_c2}`` (or ``None``) for the coordinate
    framework.  ``n_star`` defaults to the value computed from ``memberships``
    and may be larger (to share a model shape across datasets).
    """
    framework = Framework.parse(framework)
    config = config or memberships.config
    if config != memberships.config:
        raise UsageError("config differs from the one used to build the memberships")
    dicts = _framework_dicts(framework, dictionary)
    found = compute_n_star(memberships)
    n_star = found if n_star is None else int(n_star)
    if n_star < found:
        raise UsageError(f"n_star={n_star} is smaller than the {found} members observed")
    W, Th = config.window, config.t_history
    samples = []
    for cid, cm in memberships.centers.items():
        ctrack = trajectories.agents[cid]
        cpos = ctrack.positions
        pair_cache: dict = {}
        for offset in memberships.windows(cid):
            members = memberships.window_members(cid, offset)
            if not members:
                continue
            d0 = np.where(cm.present[members, offset], distance(cpos[offset], cm.positions[members, offset]), np.inf)
            order = sorted(range(len(members)), key=lambda k: (d0[k], cm.entities[members[k]]))
            slots = [members[k] for k in order]
            sl = slice(offset, offset + W)
            world = np.zeros((n_star, W, 2))
            present = np.zeros((n_star, W), dtype=bool)
            mask = np.zeros((n_star, W), dtype=bool)
            world[:len(slots)] = cm.positions[slots, sl]
            present[:len(slots)] = cm.present[slots, sl]
            mask[:len(slots)] = cm.inside[slots, sl]
            streams = {}
            for m, dct in dicts.items():
                idx = np.full((n_star, W), dct.impossible_index, dtype=np.int64)
                for s, e in enumerate(slots):
                    key = (e, m)
                    if key not in pair_cache:
                        pair_cache[key] = _PairCodes(cpos, cm.positions[e], cm.present[e], memberships.rate,
                                                     dct.variant, tolerance)
                    codes = pair_cache[key].window(offset, W)
                    ok = mask[s]
                    idx[s, ok] = dct.indices(codes[ok])
                streams[m] = idx
            sample = ClusterSample(
                center=cid, window_start=int(cm.frames[offset]),
                members=tuple(cm.entities[e] for e in slots), t_history=Th,
                world=world, present=present, mask=mask, center_track=cpos[sl].copy())
            if framework.symbolic:
                sample.indices = streams[framework.qtc_variant.length]
            else:
                sample.qtc_indices = streams
            samples.append(sample)
    return samples


def _framework_dicts(framework: Framework, dictionary) -> dict:
    if framework.symbolic:
        if not isinstance(dictionary, Dictionary):
            raise UsageError(f"framework {framework.value} needs a QTC dictionary")
        if dictionary.variant is not framework.qtc_variant:
            raise UsageError(f"dictionary variant {dictionary.variant.name} does not match framework {framework.value}")
        return {dictionary.variant.length: dictionary}
    if dictionary is None:
        return {}
    if isinstance(dictionary, Dictionary):
        dictionary = {dictionary.variant.length: dictionary}
    for m, d in dictionary.items():
        if d.variant.length != m:
            raise DataError(f"dictionary for {m} symbols has variant {d.variant.name}")
    return dict(sorted(dictionary.items()))
