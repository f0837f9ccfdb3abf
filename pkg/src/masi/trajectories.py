"""Trajectory and static-object ingestion.

CSV schemas::

    #rate=15            (optional first line; frames per second)
    frame,agent_id,x,y

    object_id,x,y

Units are metres and frames.  An agent whose frame indices have gaps is split
into independent segments named ``<id>#0``, ``<id>#1``, ... so no motion is
ever interpolated.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, UsageError

DEFAULT_RATE = 15.0


@dataclass(eq=False)
class Track:
    frames: np.ndarray  # (N,) strictly increasing, contiguous
    positions: np.ndarray  # (N, 2)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.frames) != len(self.positions) or len(self.frames) == 0:
            raise DataError("track frames and positions must be non-empty and aligned")
        if np.any(np.diff(self.frames) <= 0):
            raise DataError("track frames must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise DataError("track positions must be finite")

    @property
    def start(self) -> int:
        return int(self.frames[0])

    @property
    def end(self) -> int:
        return int(self.frames[-1])

    def __len__(self):
        return len(self.frames)

    def velocities(self, rate) -> np.ndarray:
        """Backward difference times ``rate``; forward difference on the first frame."""
        p = self.positions
        v = np.zeros_like(p)
        if len(p) > 1:
            v[1:] = (p[1:] - p[:-1]) * rate
            v[0] = (p[1] - p[0]) * rate
        return v

    def __eq__(self, other):
        return (isinstance(other, Track) and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.positions, other.positions))


@dataclass(eq=False)
class TrajectorySet:
    rate: float = DEFAULT_RATE
    agents: dict = field(default_factory=dict)  # id -> Track
    static_objects: dict = field(default_factory=dict)  # id -> (2,) position
    primitives: tuple = ()  # closed-form motion instances when synthetic

    def __post_init__(self):
        if not self.rate > 0:
            raise DataError("frame rate must be positive")
        self.static_objects = {k: np.asarray(v, dtype=float).reshape(2) for k, v in self.static_objects.items()}
        overlap = set(self.agents) & set(self.static_objects)
        if overlap:
            raise DataError(f"ids used by both agents and static objects: {sorted(overlap)}")

    @property
    def frame_range(self) -> tuple[int, int]:
        if not self.agents:
            raise UsageError("trajectory set has no agents")
        return min(t.start for t in self.agents.values()), max(t.end for t in self.agents.values())

    def __eq__(self, other):
        return (isinstance(other, TrajectorySet) and self.rate == other.rate
                and self.agents.keys() == other.agents.keys()
                and all(self.agents[k] == other.agents[k] for k in self.agents)
                and self.static_objects.keys() == other.static_objects.keys()
                and all(np.array_equal(self.static_objects[k], other.static_objects[k]) for k in self.static_objects))

    def with_static_objects(self, objects: dict) -> "TrajectorySet":
        clash = set(objects) & set(self.agents)
        if clash:
            raise DataError(f"static object ids collide with agent ids: {sorted(clash)}")
        merged = dict(self.static_objects)
        merged.update(objects)
        return TrajectorySet(self.rate, dict(self.agents), merged, self.primitives)

    def position_at(self, entity: str, frame: int):
        """Position of an agent or static object at ``frame`` (``None`` if absent)."""
        if entity in self.static_objects:
            return self.static_objects[entity]
        track = self.agents[entity]
        i = frame - track.start
        if 0 <= i < len(track):
            return track.positions[i]
        return None

    def speed_at(self, entity: str, frame: int) -> float:
        if entity in self.static_objects:
            return 0.0
        track = self.agents[entity]
        return float(np.hypot(*track.velocities(self.rate)[frame - track.start]))

    # -- CSV output --------------------------------------------------------

    def write_csv(self, path):
        rows = []
        for aid, tr in self.agents.items():
            base = aid.split("#")[0] if "#" in aid else aid
            rows += [(int(f), base, p[0], p[1]) for f, p in zip(tr.frames, tr.positions)]
        rows.sort(key=lambda r: (r[0], r[1]))
        with open(path, "w", newline="") as fh:
            fh.write(f"#rate={self.rate!r}\n")
            w = csv.writer(fh)
            w.writerow(["frame", "agent_id", "x", "y"])
            for f, a, x, y in rows:
                w.writerow([f, a, repr(float(x)), repr(float(y))])

    def write_objects_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["object_id", "x", "y"])
            for oid, p in self.static_objects.items():
                w.writerow([oid, repr(float(p[0])), repr(float(p[1]))])


def split_segments(agent_id: str, frames, positions) -> dict:
    """Split one agent's rows at frame gaps."""
    frames = np.asarray(frames, dtype=np.int64)
    positions = np.asarray(positions, dtype=float)
    cuts = np.nonzero(np.diff(frames) > 1)[0] + 1
    pieces = np.split(np.arange(len(frames)), cuts)
    if len(pieces) == 1:
        return {agent_id: Track(frames, positions)}
    return {f"{agent_id}#{k}": Track(frames[ix], positions[ix]) for k, ix in enumerate(pieces)}


def _read_lines(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return text.splitlines()


def load_trajectories(path) -> TrajectorySet:
    lines = _read_lines(path)
    rate = DEFAULT_RATE
    start = 0
    if lines and lines[0].startswith("#"):
        head = lines[0][1:].strip()
        if head.startswith("rate="):
            try:
                rate = float(head[5:])
            except ValueError:
                raise ParseError(f"bad rate header {lines[0]!r}", 1) from None
            if not rate > 0:
                raise ParseError("rate must be positive", 1)
        start = 1
    body = [(i + 1, ln) for i, ln in enumerate(lines) if i >= start and ln.strip()]
    if not body:
        raise ParseError("empty trajectory file", 1)
    header_line, header = body[0]
    if [h.strip() for h in header.split(",")] != ["frame", "agent_id", "x", "y"]:
        raise ParseError(f"expected header 'frame,agent_id,x,y', got {header!r}", header_line)
    rows: dict[str, list] = {}
    for lineno, ln in body[1:]:
        fields = next(csv.reader(io.StringIO(ln)))
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", lineno)
        try:
            frame = int(fields[0])
            x, y = float(fields[2]), float(fields[3])
        except ValueError:
            raise ParseError(f"malformed row {ln!r}", lineno) from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ParseError("non-finite coordinate", lineno)
        aid = fields[1].strip()
        if not aid:
            raise ParseError("empty agent id", lineno)
        seq = rows.setdefault(aid, [])
        if seq and frame <= seq[-1][0]:
            raise DataError(f"line {lineno}: frames for agent {aid!r} are not strictly increasing")
        seq.append((frame, x, y))
    if not rows:
        raise ParseError("trajectory file has no rows", header_line)
    agents = {}
    for aid, seq in rows.items():
        arr = np.array(seq, dtype=float)
        agents.update(split_segments(aid, arr[:, 0].astype(np.int64), arr[:, 1:]))
    return TrajectorySet(rate, agents)


def load_static_objects(path, trajset: TrajectorySet) -> TrajectorySet:
    """Attach static objects (zero-velocity entities present at every frame)."""
    lines = _read_lines(path)
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    if not body:
        raise ParseError("empty static object file", 1)
    if [h.strip() for h in body[0][1].split(",")] != ["object_id", "x", "y"]:
        raise ParseError(f"expected header 'object_id,x,y', got {body[0][1]!r}", body[0][0])
    objects = {}
    for lineno, ln in body[1:]:
        fields = next(csv.reader(io.StringIO(ln)))
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            x, y = float(fields[1]), float(fields[2])
        except ValueError:
            raise ParseError(f"malformed row {ln!r}", lineno) from None
        oid = fields[0].strip()
        if oid in objects:
            raise DataError(f"line {lineno}: duplicate object id {oid!r}")
        objects[oid] = np.array([x, y])
    return trajset.with_static_objects(objects)
