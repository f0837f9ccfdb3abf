"""Double-cross Qualitative Trajectory Calculus (QTC_C1 / QTC_C2).

Symbols are stored as small integers: ``-1``, ``0``, ``+1`` and ``10`` for the
"impossible" marker used when an agent is absent from a cluster.  All kernels
work on numpy arrays with a trailing coordinate axis so that whole windows or
sampling grids are processed in one call; the ``PointState`` helpers wrap the
same kernel for single pairs.
"""
from __future__ import annotations

import enum
import functools
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegeneratePairError, DictionaryLookupError, UsageError

log = logging.getLogger(__name__)

IMPOSSIBLE = 10
REFERENCE_DICTIONARY_SIZE = {4: 82, 6: 444}


class QtcSymbol(enum.IntEnum):
    MINUS = -1
    ZERO = 0
    PLUS = 1
    IMPOSSIBLE = IMPOSSIBLE

    def __str__(self):
        return {-1: "-", 0: "0", 1: "+", IMPOSSIBLE: "x"}[int(self)]


class Variant(enum.Enum):
    C1 = 4
    C2 = 6

    @property
    def length(self) -> int:
        return self.value

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, Variant):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if key in ("C1", "QTC4", "4"):
                return cls.C1
            if key in ("C2", "QTC6", "6"):
                return cls.C2
        if value in (4, 6):
            return cls(value)
        raise UsageError(f"unknown QTC variant {value!r}")


@dataclass(frozen=True)
class ToleranceSet:
    """Bands inside which a comparison counts as equality (symbol 0)."""

    distance: float = 1e-3  # metres
    cross: float = 1e-3  # cross product of unit vectors
    speed: float = 1e-3  # metres / second
    angle: float = 1e-3  # radians

    def __post_init__(self):
        for name in ("distance", "cross", "speed", "angle"):
            if not getattr(self, name) > 0:
                raise UsageError(f"tolerance {name} must be strictly positive")


DEFAULT_TOLERANCE = ToleranceSet()


@dataclass(frozen=True)
class PointState:
    position: tuple
    velocity: tuple
    frame: int = 0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        vel = tuple(float(v) for v in self.velocity)
        if len(pos) != 2 or len(vel) != 2:
            raise UsageError("PointState needs 2D position and velocity")
        if not all(np.isfinite(pos + vel)):
            raise UsageError("PointState values must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)


def states_from_positions(positions, rate=15.0, start_frame=0) -> list[PointState]:
    """Point states along a track; velocity is the backward difference times
    ``rate`` (forward difference on the first frame)."""
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 2:
        vel = np.zeros_like(pos)
    else:
        vel = np.empty_like(pos)
        vel[1:] = (pos[1:] - pos[:-1]) * rate
        vel[0] = (pos[1] - pos[0]) * rate
    return [PointState(p, v, start_frame + i) for i, (p, v) in enumerate(zip(pos, vel))]


@dataclass(frozen=True)
class QtcVector:
    symbols: tuple

    def __post_init__(self):
        syms = tuple(int(s) for s in self.symbols)
        if len(syms) not in (4, 6):
            raise UsageError(f"QTC vector must have 4 or 6 symbols, got {len(syms)}")
        impossible = [s == IMPOSSIBLE for s in syms]
        if any(impossible):
            if not all(impossible):
                raise UsageError(f"mixed impossible/regular symbols: {syms}")
        elif not all(s in (-1, 0, 1) for s in syms):
            raise UsageError(f"invalid QTC symbols: {syms}")
        object.__setattr__(self, "symbols", syms)

    @classmethod
    def impossible(cls, variant) -> "QtcVector":
        return cls((IMPOSSIBLE,) * Variant.parse(variant).length)

    @classmethod
    def parse(cls, text: str) -> "QtcVector":
        table = {"-": -1, "0": 0, "+": 1, "x": IMPOSSIBLE}
        parts = text.strip().strip("()").split(",")
        try:
            return cls(tuple(table[p.strip()] for p in parts))
        except KeyError as exc:
            raise UsageError(f"cannot parse QTC vector {text!r}") from exc

    @property
    def variant(self) -> Variant:
        return Variant(len(self.symbols))

    @property
    def is_impossible(self) -> bool:
        return self.symbols[0] == IMPOSSIBLE

    def swapped(self) -> "QtcVector":
        """The same relation seen with the two agents' roles exchanged."""
        if self.is_impossible:
            return self
        s = self.symbols
        out = [s[1], s[0], s[3], s[2]]
        if len(s) == 6:
            out += [-s[4], -s[5]]
        return QtcVector(tuple(out))

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __str__(self):
        return "(" + ",".join(str(QtcSymbol(s)) for s in self.symbols) + ")"


# ---------------------------------------------------------------------------
# vectorised kernel


def _sign(x, tol):
    return np.asarray(x > tol, dtype=np.int8) - np.asarray(x < -tol, dtype=np.int8)


def _norm(v):
    return np.hypot(v[..., 0], v[..., 1])


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _side(heading, toward, dist, tol):
    n = _norm(heading)
    moving = n > 0.0
    unit_cross = _cross(heading, toward) / (np.where(moving, n, 1.0) * dist)
    return np.where(moving, _sign(unit_cross, tol), 0).astype(np.int8)


def _abs_angle(v, toward):
    """Unsigned angle in [0, pi]; a zero vector yields 0."""
    theta = np.arctan2(np.abs(_cross(v, toward)), np.sum(v * toward, axis=-1))
    return np.where(_norm(v) > 0.0, theta, 0.0)


def qtc_codes(r_prev, r_cur, heading_r, v_r, h_prev, h_cur, heading_h, v_h,
              variant=Variant.C2, tol: ToleranceSet = DEFAULT_TOLERANCE,
              degenerate="raise"):
    """Symbol codes for arrays of pair configurations.

    Every argument is an array of shape ``(..., 2)``.  ``heading_*`` is the
    displacement used for the left/right symbols, ``v_*`` the velocity used
    for the speed and angle symbols.  Returns ``int8`` codes of shape
    ``(..., m)``.  With ``degenerate="zero"`` coincident pairs produce the
    all-zero vector instead of raising.
    """
    variant = Variant.parse(variant)
    r_prev, r_cur, h_prev, h_cur = (np.asarray(a, dtype=float) for a in (r_prev, r_cur, h_prev, h_cur))
    heading_r, heading_h, v_r, v_h = (np.asarray(a, dtype=float) for a in (heading_r, heading_h, v_r, v_h))
    rh = h_cur - r_cur
    dist = _norm(rh)
    bad = dist < tol.distance
    if np.any(bad):
        if degenerate == "raise":
            raise DegeneratePairError(
                f"agents coincide (distance {float(np.min(dist)):.3g} m below {tol.distance} m)")
        dist = np.where(bad, 1.0, dist)

    q1 = -_sign(_norm(r_prev - h_cur) - dist, tol.distance)
    q2 = -_sign(_norm(h_prev - r_cur) - dist, tol.distance)
    q3 = _side(heading_r, rh, dist, tol.cross)
    q4 = _side(heading_h, -rh, dist, tol.cross)
    cols = [q1, q2, q3, q4]
    if variant is Variant.C2:
        cols.append(_sign(_norm(v_r) - _norm(v_h), tol.speed))
        cols.append(_sign(_abs_angle(v_r, rh) - _abs_angle(v_h, -rh), tol.angle))
    out = np.stack(cols, axis=-1).astype(np.int8)
    if np.any(bad):
        out[bad] = 0
    return out


def _pair_inputs(prev: PointState, cur: PointState, nxt: PointState | None):
    p_prev = np.array(prev.position)
    p_cur = np.array(cur.position)
    heading = (np.array(nxt.position) if nxt is not None else p_cur) - (p_cur if nxt is not None else p_prev)
    return p_prev, p_cur, heading, np.array(cur.velocity)


def _compute(variant, r_prev, r_cur, r_next, h_prev, h_cur, h_next, eps):
    eps = eps or DEFAULT_TOLERANCE
    rp, rc, hr, vr = _pair_inputs(r_prev, r_cur, r_next)
    hp, hc, hh, vh = _pair_inputs(h_prev, h_cur, h_next)
    codes = qtc_codes(rp, rc, hr, vr, hp, hc, hh, vh, variant, eps)
    return QtcVector(tuple(int(c) for c in codes))


def compute_qtc_c1(r_prev, r_cur, r_next, h_prev, h_cur, h_next, eps: ToleranceSet | None = None) -> QtcVector:
    """QTC_C1 relation between ``r`` and ``h`` at the current frame.

    ``r_next`` / ``h_next`` may be ``None``; the left/right symbols then use
    the displacement from the previous frame instead.
    """
    return _compute(Variant.C1, r_prev, r_cur, r_next, h_prev, h_cur, h_next, eps)


def compute_qtc_c2(r_prev, r_cur, r_next, h_prev, h_cur, h_next, eps: ToleranceSet | None = None) -> QtcVector:
    return _compute(Variant.C2, r_prev, r_cur, r_next, h_prev, h_cur, h_next, eps)


def track_kinematics(pos, present, rate):
    """Previous position, heading and velocity for each step of a track.

    ``pos`` is ``(T, ..., 2)`` and ``present`` a ``(T, ...)`` bool mask; any
    axes after the first are independent tracks.  Only steps inside the
    given arrays are consulted: a step without a present predecessor
    extrapolates one backwards from its successor, and a step without a
    present successor takes its heading from the predecessor.
    """
    pos = np.asarray(pos, dtype=float)
    present = np.asarray(present, dtype=bool)
    has_prev = np.zeros(present.shape, dtype=bool)
    has_next = np.zeros(present.shape, dtype=bool)
    has_prev[1:] = present[:-1] & present[1:]
    has_next[:-1] = present[1:] & present[:-1]
    has_prev, has_next = has_prev[..., None], has_next[..., None]
    before = np.concatenate([pos[:1], pos[:-1]])
    after = np.concatenate([pos[1:], pos[-1:]])
    prev = np.where(has_prev, before, np.where(has_next, 2.0 * pos - after, pos))
    heading = np.where(has_next, after - pos, pos - prev)
    velocity = (pos - prev) * rate
    return prev, heading, velocity


def pair_series(r_pos, h_pos, r_present, h_present, rate, variant=Variant.C2,
                tol: ToleranceSet = DEFAULT_TOLERANCE, degenerate="raise"):
    """QTC codes ``(T, ..., m)`` between two tracks over a window.

    Steps where either track is absent carry the impossible code.  Extra axes
    after time hold independent windows (see :func:`track_kinematics`).
    """
    variant = Variant.parse(variant)
    r_present = np.asarray(r_present, dtype=bool)
    h_present = np.asarray(h_present, dtype=bool)
    r_prev, r_head, r_vel = track_kinematics(r_pos, r_present, rate)
    h_prev, h_head, h_vel = track_kinematics(h_pos, h_present, rate)
    both = r_present & h_present
    out = np.full(both.shape + (variant.length,), IMPOSSIBLE, dtype=np.int8)
    if np.any(both):
        r_pos = np.asarray(r_pos, dtype=float)
        h_pos = np.asarray(h_pos, dtype=float)
        out[both] = qtc_codes(r_prev[both], r_pos[both], r_head[both], r_vel[both],
                              h_prev[both], h_pos[both], h_head[both], h_vel[both],
                              variant, tol, degenerate)
    return out


# ---------------------------------------------------------------------------
# conceptual distance


def _codes_of(v):
    if isinstance(v, QtcVector):
        return v.symbols
    return QtcVector(tuple(v)).symbols


def conceptual_distance(a, b) -> int:
    """Sum of absolute differences of the numeric symbol codes."""
    sa, sb = _codes_of(a), _codes_of(b)
    if len(sa) != len(sb):
        raise UsageError(f"cannot compare a {len(sa)}-symbol and a {len(sb)}-symbol QTC vector")
    return int(sum(abs(x - y) for x, y in zip(sa, sb)))


# ---------------------------------------------------------------------------
# dictionary


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class Dictionary:
    """Bijection between QTC vectors and class indices.

    Entries are sorted by their numeric codes; the impossible vector is always
    the last entry.
    """

    def __init__(self, variant, entries: Iterable):
        self.variant = Variant.parse(variant)
        m = self.variant.length
        vecs = sorted({tuple(int(s) for s in _codes_of(e)) for e in entries} - {(IMPOSSIBLE,) * m})
        if any(len(v) != m for v in vecs):
            raise UsageError(f"dictionary entries must all have {m} symbols")
        vecs.append((IMPOSSIBLE,) * m)
        self.entries = tuple(QtcVector(v) for v in vecs)
        self.codes = np.array(vecs, dtype=np.int8)
        self.codes.setflags(write=False)
        self._index = {v: i for i, v in enumerate(vecs)}
        # dense table over base-3 keys for vectorised lookup; -1 = absent
        self._table = np.full(3 ** m, -1, dtype=np.int64)
        regular = self.codes[:-1].astype(np.int64)
        self._table[self._keys(regular)] = np.arange(len(regular))

    @staticmethod
    def _keys(codes):
        codes = np.asarray(codes, dtype=np.int64)
        weights = 3 ** np.arange(codes.shape[-1], dtype=np.int64)
        return np.sum((codes + 1) * weights, axis=-1)

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def impossible_index(self) -> int:
        return len(self.entries) - 1

    def __eq__(self, other):
        return isinstance(other, Dictionary) and self.variant == other.variant and self.entries == other.entries

    def __hash__(self):
        return hash((self.variant, self.entries))

    def __repr__(self):
        return f"Dictionary({self.variant.name}, {self.size} entries)"

    def index(self, vector) -> int:
        key = tuple(_codes_of(vector))
        try:
            return self._index[key]
        except KeyError:
            raise DictionaryLookupError(str(QtcVector(key))) from None

    def vector(self, index) -> QtcVector:
        i = int(index)
        if not 0 <= i < len(self.entries):
            raise DictionaryLookupError(index)
        return self.entries[i]

    def indices(self, codes, snap=False):
        """Vectorised code -> index mapping for arrays of shape ``(..., m)``.

        Unknown vectors raise, or with ``snap=True`` map to the nearest entry
        by conceptual distance (ties go to the lower index).
        """
        codes = np.asarray(codes)
        if codes.shape[-1] != self.variant.length:
            raise UsageError(f"expected {self.variant.length} symbols, got {codes.shape[-1]}")
        imp = codes[..., 0] == IMPOSSIBLE
        safe = np.where(imp[..., None], 0, codes)
        out = self._table[self._keys(safe)]
        out = np.where(imp, self.impossible_index, out)
        missing = out < 0
        if np.any(missing):
            if not snap:
                bad = codes[missing][0]
                raise DictionaryLookupError(str(QtcVector(tuple(bad))))
            dist = np.abs(codes[missing][:, None, :].astype(np.int64) - self.codes[None].astype(np.int64)).sum(-1)
            out = out.copy()
            out[missing] = np.argmin(dist, axis=1)
        return out.astype(np.int64)

    @functools.cached_property
    def distance_table(self) -> np.ndarray:
        c = self.codes.astype(np.int64)
        return np.abs(c[:, None, :] - c[None, :, :]).sum(-1)

    def to_bytes(self) -> bytes:
        return bytes([self.variant.length]) + self.codes.astype("<i1").tobytes()

    @property
    def digest(self) -> str:
        return f"{_fnv1a64(self.to_bytes()):016x}"


def dict_lookup(dictionary: Dictionary, key):
    """Index for a vector, or vector for an index."""
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return dictionary.vector(key)
    return dictionary.index(key)


# ---------------------------------------------------------------------------
# dictionary construction by kinematic sampling


@dataclass(frozen=True)
class SamplingConfig:
    """Density of the kinematic grid used to enumerate realizable vectors.

    Step lengths are fractions of the pair distance: zero plus ``n_speeds``
    geometrically spaced values from ``min_step`` to ``max_step``, so both
    motions inside the tolerance bands and large per-frame jumps occur.
    Step directions combine ``n_angles`` uniform angles with the angles where
    the towards/away symbol changes, approached from both sides by
    ``n_ladder`` geometric offsets.
    """

    n_angles: int = 24
    n_speeds: int = 8
    n_headings: int = 8
    distances: tuple = (0.5, 1.0, 2.0)
    min_step: float = 1e-4
    max_step: float = 4.0
    collinear_only: bool = False
    rate: float = 15.0
    tolerance: ToleranceSet = field(default_factory=ToleranceSet)
    n_ladder: int = 6

    def __post_init__(self):
        if self.n_angles < 4 or self.n_angles % 4:
            raise UsageError("n_angles must be a positive multiple of 4")
        if self.n_speeds < 1 or self.n_headings < 1 or self.n_ladder < 0:
            raise UsageError("sampling densities must be positive")
        if not (0 < self.min_step < self.max_step) or not all(d > 0 for d in self.distances):
            raise UsageError("sampling steps and distances must be positive")

    def doubled(self) -> "SamplingConfig":
        return SamplingConfig(self.n_angles * 2, self.n_speeds * 2, self.n_headings * 2, self.distances,
                              self.min_step, self.max_step, self.collinear_only, self.rate, self.tolerance,
                              self.n_ladder * 2)

    def _directions(self, n):
        if self.collinear_only:
            angles = np.array([0.0, np.pi])
        else:
            angles = 2 * np.pi * np.arange(n) / n
        # exact axis values keep perpendicular and collinear cases exact
        return np.round(np.stack([np.cos(angles), np.sin(angles)], -1), 15)

    def magnitudes(self):
        return np.concatenate([[0.0], np.geomspace(self.min_step, self.max_step, self.n_speeds)])

    def steps(self):
        dirs = self._directions(self.n_angles)
        mags = self.magnitudes()[1:]
        return np.vstack([np.zeros((1, 2)), (mags[:, None, None] * dirs[None]).reshape(-1, 2)])

    def headings(self):
        return np.vstack([np.zeros((1, 2)), self._directions(self.n_headings)])

    def angles(self, distance):
        """Angles to the line of sight (in ``[0, pi]``) used for every step length.

        Besides the uniform grid this holds, for each step length ``s``, the
        angles at which the distance change equals zero and ``+-tol``, each
        approached from both sides by geometric offsets.
        """
        if self.collinear_only:
            return np.array([0.0, np.pi])
        base = [np.pi * np.arange(self.n_angles // 2 + 1) / (self.n_angles // 2)]
        t = self.tolerance.distance
        offsets = np.concatenate([[0.0], np.geomspace(1e-6, 0.5, self.n_ladder)]) if self.n_ladder else np.zeros(1)
        offsets = np.concatenate([-offsets[1:], offsets])
        for s in self.magnitudes()[1:] * distance:
            for change in (-t, 0.0, t):
                # |(d, 0) + s (cos a, sin a)| = d + change
                c = ((distance + change) ** 2 - distance ** 2 - s * s) / (2 * distance * s)
                if -1.0 <= c <= 1.0:
                    base.append(np.arccos(c) + offsets)
        theta = np.concatenate(base)
        return np.unique(np.round(theta[(theta >= 0) & (theta <= np.pi)], 15))


@dataclass
class DeviationReport:
    variant: Variant
    target: int
    count: int
    smooth_limit: list
    disputed: list

    def to_text(self) -> str:
        lines = [
            f"QTC_{self.variant.name} dictionary deviation report",
            f"target entries (incl. impossible): {self.target}",
            f"enumerated entries (incl. impossible): {self.count}",
            f"vectors realizable under smooth small-step motion: {len(self.smooth_limit)}",
            f"disputed vectors (realizable only with frame-scale steps or heading changes): {len(self.disputed)}",
        ]
        lines += [f"  {v}" for v in self.disputed]
        return "\n".join(lines) + "\n"


@dataclass
class RealizabilityReport:
    variant: Variant
    count: int
    doubled_count: int | None
    stable: bool | None
    target: int | None
    deviation: DeviationReport | None = None

    @property
    def matches_target(self) -> bool:
        return self.target is not None and self.count == self.target


def _grid_codes(variant, cfg: SamplingConfig, steps_r, steps_h, heads_r, heads_h, distance):
    """Codes for every (r, h) combination at a fixed pair distance."""
    rate = cfg.rate
    i, j = np.meshgrid(np.arange(len(steps_r)), np.arange(len(steps_h)), indexing="ij")
    i, j = i.ravel(), j.ravel()
    r_cur = np.zeros((len(i), 2))
    h_cur = np.tile([distance, 0.0], (len(i), 1))
    vr, vh = steps_r[i], steps_h[j]
    hr = vr if heads_r is None else heads_r[i]
    hh = vh if heads_h is None else heads_h[j]
    return qtc_codes(r_cur - vr, r_cur, hr, vr * rate, h_cur - vh, h_cur, hh, vh * rate, variant, cfg.tolerance)


def _unique_rows(codes, cols):
    _, first = np.unique(codes[:, cols], axis=0, return_index=True)
    return np.sort(first)


def _agent_steps(cfg: SamplingConfig, distance):
    """Step vectors of ``r`` (towards ``+x``) and the mirrored steps of ``h``."""
    mags = cfg.magnitudes()[1:] * distance
    theta = cfg.angles(distance)
    s, a = (g.ravel() for g in np.meshgrid(mags, theta, indexing="ij"))
    r = np.vstack([np.zeros((1, 2)), np.stack([s * np.cos(a), s * np.sin(a)], -1)])
    return r, r * np.array([-1.0, 1.0])


def _backward_witnesses(variant: Variant, cfg: SamplingConfig, distance):
    """One ``(r step, h step)`` pair per distinct backward partial vector.

    The towards/away symbol of each agent depends on its own step only, and
    the speed and angle symbols compare one scalar per agent.  So every
    agent step is classified once, and the comparisons are then searched
    class pair by class pair.
    """
    rate, tol = cfg.rate, cfg.tolerance
    step_r, step_h = _agent_steps(cfg, distance)
    rh = np.array([distance, 0.0])
    zero = np.zeros_like(step_r)
    r_cur = np.zeros_like(step_r)
    h_cur = np.broadcast_to(rh, step_r.shape)
    q1 = qtc_codes(r_cur - step_r, r_cur, zero, zero, h_cur, h_cur, zero, zero, Variant.C1, tol)[:, 0]
    q2 = qtc_codes(r_cur, r_cur, zero, zero, h_cur - step_h, h_cur, zero, zero, Variant.C1, tol)[:, 1]
    found = {}
    if variant is Variant.C1:
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                ia, ib = np.nonzero(q1 == a)[0], np.nonzero(q2 == b)[0]
                if len(ia) and len(ib):
                    found[(a, b)] = (ia[0], ib[0])
    else:
        speed_r, speed_h = _norm(step_r * rate), _norm(step_h * rate)
        ang_r, ang_h = _abs_angle(step_r * rate, rh), _abs_angle(step_h * rate, -rh)
        chunk = max(1, 2_000_000 // len(step_h))
        for a in (-1, 0, 1):
            ia = np.nonzero(q1 == a)[0]
            for b in (-1, 0, 1):
                ib = np.nonzero(q2 == b)[0]
                if not len(ib):
                    continue
                seen = {}
                for lo in range(0, len(ia), chunk):
                    rows = ia[lo:lo + chunk]
                    q5 = _sign(speed_r[rows, None] - speed_h[None, ib], tol.speed)
                    q6 = _sign(ang_r[rows, None] - ang_h[None, ib], tol.angle)
                    keys, first = np.unique((3 * q5 + q6).ravel(), return_index=True)
                    for k, f in zip(keys.tolist(), first.tolist()):
                        seen.setdefault(k, (rows[f // len(ib)], ib[f % len(ib)]))
                    if len(seen) == 9:
                        break
                for k, w in seen.items():
                    found[(a, b, k)] = w
    idx = np.array(list(found.values()))
    return step_r[idx[:, 0]], step_h[idx[:, 1]]


def _enumerate(variant: Variant, cfg: SamplingConfig) -> set:
    """Realizable vectors on the sampling grid.

    The towards/away, speed and angle symbols depend only on the previous
    displacements, the left/right symbols only on the next ones.  Each family
    is swept separately, one representative configuration is kept per
    distinct partial result, and every pairing of representatives is then
    evaluated as a complete configuration.
    """
    found = set()
    for d in cfg.distances:
        b_r, b_h = _backward_witnesses(variant, cfg, d)
        heads = cfg.headings() * (0.1 * d)
        zero = np.zeros((len(heads), 2))
        fwd = _grid_codes(variant, cfg, zero, zero, heads, heads, d)
        nh = len(heads)
        f_idx = _unique_rows(fwd, [2, 3])
        f_r, f_h = heads[f_idx // nh], heads[f_idx % nh]

        bi, fi = np.meshgrid(np.arange(len(b_r)), np.arange(len(f_idx)), indexing="ij")
        bi, fi = bi.ravel(), fi.ravel()
        r_cur = np.zeros((len(bi), 2))
        h_cur = np.tile([d, 0.0], (len(bi), 1))
        codes = qtc_codes(r_cur - b_r[bi], r_cur, f_r[fi], b_r[bi] * cfg.rate,
                          h_cur - b_h[bi], h_cur, f_h[fi], b_h[bi] * cfg.rate, variant, cfg.tolerance)
        found.update(map(tuple, np.unique(codes, axis=0).tolist()))
    return found


def _smooth_limit(variant: Variant, cfg: SamplingConfig) -> set:
    """Vectors reachable by constant-velocity motion with steps of at most 2%
    of the pair distance (the small-step limit)."""
    small = SamplingConfig(cfg.n_angles, 4, cfg.n_headings, cfg.distances, 1e-4, 0.02, cfg.collinear_only,
                           cfg.rate, cfg.tolerance, 0)
    found = set()
    for d in small.distances:
        steps = small.steps() * d
        found.update(map(tuple, np.unique(_grid_codes(variant, small, steps, steps, None, None, d), axis=0).tolist()))
    return found


def build_dictionary(variant, sampling: SamplingConfig | None = None, check_stability=True):
    """Enumerate the realizable vectors of a variant on a kinematic grid.

    Returns ``(Dictionary, RealizabilityReport)``.  With ``check_stability``
    the grid is rebuilt at doubled density and the counts compared.  When the
    count differs from the reference dictionary size a deviation report is
    attached and logged; the enumerated set is used regardless.
    """
    variant = Variant.parse(variant)
    cfg = sampling or SamplingConfig()
    vectors = _enumerate(variant, cfg)
    dictionary = Dictionary(variant, vectors)
    doubled = stable = None
    if check_stability:
        doubled_vectors = _enumerate(variant, cfg.doubled())
        doubled = len(doubled_vectors) + 1
        stable = doubled_vectors == vectors
    target = None if cfg.collinear_only else REFERENCE_DICTIONARY_SIZE[variant.length]
    report = RealizabilityReport(variant, dictionary.size, doubled, stable, target)
    if target is not None and dictionary.size != target:
        smooth = _smooth_limit(variant, cfg)
        disputed = [str(QtcVector(v)) for v in sorted(vectors - smooth)]
        report.deviation = DeviationReport(variant, target, dictionary.size,
                                           [str(QtcVector(v)) for v in sorted(smooth)], disputed)
        log.warning("QTC_%s dictionary has %d entries, reference size is %d (%d disputed vectors)",
                    variant.name, dictionary.size, target, len(disputed))
    return dictionary, report


@functools.lru_cache(maxsize=None)
def default_dictionary(variant) -> Dictionary:
    """Dictionary built with the default sampling grid (cached)."""
    return build_dictionary(Variant.parse(variant), check_stability=False)[0]


def all_vectors(variant) -> list[QtcVector]:
    """Every regular vector of a variant, realizable or not."""
    m = Variant.parse(variant).length
    return [QtcVector(v) for v in itertools.product((-1, 0, 1), repeat=m)]


def codes_to_vectors(codes: Sequence) -> list[QtcVector]:
    return [QtcVector(tuple(c)) for c in np.asarray(codes).tolist()]
