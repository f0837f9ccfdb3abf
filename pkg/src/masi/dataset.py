"""Dataset construction, chronological splitting and persistence."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fileformat
from .cluster import ClusterConfig, ClusterSample, Framework, assemble_samples, build_clusters, compute_n_star
from .errors import CompatibilityError, CorruptionError, UsageError
from .qtc import DEFAULT_TOLERANCE, Dictionary, ToleranceSet, Variant, default_dictionary
from .trajectories import TrajectorySet

SPLITS = ("train", "validation", "test")
MIN_SAMPLES = 10


@dataclass(eq=False)
class DatasetSplits:
    framework: Framework
    config: ClusterConfig
    n_star: int
    rate: float
    dictionaries: dict  # symbol count -> Dictionary
    train: list
    validation: list
    test: list
    meta: dict = field(default_factory=dict)

    @property
    def dictionary(self) -> Dictionary | None:
        """The dictionary of a symbolic dataset."""
        if not self.framework.symbolic:
            return None
        return self.dictionaries[self.framework.qtc_variant.length]

    @property
    def digests(self) -> dict:
        return {m: d.digest for m, d in self.dictionaries.items()}

    def split(self, name) -> list:
        if name not in SPLITS:
            raise UsageError(f"unknown split {name!r} (expected one of {', '.join(SPLITS)})")
        return getattr(self, name)

    @property
    def sizes(self) -> tuple:
        return len(self.train), len(self.validation), len(self.test)

    def __eq__(self, other):
        if not isinstance(other, DatasetSplits):
            return NotImplemented
        return (self.framework == other.framework and self.config == other.config
                and self.n_star == other.n_star and self.rate == other.rate
                and self.dictionaries == other.dictionaries and self.meta == other.meta
                and all(_list_eq(self.split(s), other.split(s)) for s in SPLITS))


def _list_eq(a, b):
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))


def split_sizes(n: int) -> tuple:
    """80/10/10 with validation and test rounded down."""
    held = n // 10
    return n - 2 * held, held, held


def chronological_split(samples: list, seed: int = 0) -> tuple:
    """Contiguous train/validation/test blocks ordered by window start.

    Samples sharing a window start are ordered by a seeded permutation, so
    equal inputs and seeds give identical splits.
    """
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(samples))
    order = sorted(range(len(samples)), key=lambda i: (samples[i].window_start, tiebreak[i]))
    ordered = [samples[i] for i in order]
    n_train, n_val, _ = split_sizes(len(ordered))
    return ordered[:n_train], ordered[n_train:n_train + n_val], ordered[n_train + n_val:]


def dictionaries_for(framework, dictionary=None) -> dict:
    """Dictionaries a framework needs, defaulting to the built-in ones."""
    framework = Framework.parse(framework)
    if framework.symbolic:
        d = dictionary if dictionary is not None else default_dictionary(framework.qtc_variant)
        if isinstance(d, dict):
            d = d[framework.qtc_variant.length]
        return {d.variant.length: d}
    if dictionary is None:
        return {4: default_dictionary(Variant.C1), 6: default_dictionary(Variant.C2)}
    if isinstance(dictionary, Dictionary):
        raise UsageError("the coordinate framework needs both QTC_C1 and QTC_C2 dictionaries")
    return dict(sorted(dictionary.items()))


def make_dataset(trajset: TrajectorySet, framework, cluster_config: ClusterConfig, split_seed: int = 0,
                 dictionary=None, n_star: int | None = None,
                 tolerance: ToleranceSet = DEFAULT_TOLERANCE) -> DatasetSplits:
    framework = Framework.parse(framework)
    dicts = dictionaries_for(framework, dictionary)
    memberships = build_clusters(trajset, cluster_config)
    found = compute_n_star(memberships)
    n_star = found if n_star is None else n_star
    arg = dicts[framework.qtc_variant.length] if framework.symbolic else dicts
    samples = assemble_samples(memberships, trajset, arg, framework, cluster_config, n_star, tolerance)
    if len(samples) < MIN_SAMPLES:
        raise UsageError(f"only {len(samples)} samples; at least {MIN_SAMPLES} are needed to split")
    train, val, test = chronological_split(samples, split_seed)
    meta = {"split_seed": int(split_seed), "observed_n_star": int(found), "n_samples": len(samples)}
    return DatasetSplits(framework, cluster_config, int(n_star), float(trajset.rate), dicts, train, val, test, meta)


def _grow(a, extra, fill):
    if a is None:
        return None
    pad = np.full((extra,) + a.shape[1:], fill, dtype=a.dtype)
    return np.concatenate([a, pad])


def pad_samples(samples: list, n_star: int, dictionaries: dict, framework) -> list:
    """Copies of ``samples`` widened with fake slots up to ``n_star``."""
    framework = Framework.parse(framework)
    out = []
    for s in samples:
        extra = n_star - s.n_star
        if extra < 0:
            raise UsageError(f"cannot shrink {s.n_star} slots to {n_star}")
        if extra == 0:
            out.append(s)
            continue
        indices = None
        if s.indices is not None:
            imp = dictionaries[framework.qtc_variant.length].impossible_index
            indices = _grow(s.indices, extra, imp)
        out.append(ClusterSample(
            s.center, s.window_start, s.members, s.t_history,
            _grow(s.world, extra, 0.0), _grow(s.present, extra, False), _grow(s.mask, extra, False),
            s.center_track, indices,
            {m: _grow(v, extra, dictionaries[m].impossible_index) for m, v in s.qtc_indices.items()}))
    return out


def pad_dataset(ds: DatasetSplits, n_star: int) -> DatasetSplits:
    """The same dataset with ``n_star`` slots per sample."""
    if n_star == ds.n_star:
        return ds
    parts = [pad_samples(ds.split(s), n_star, ds.dictionaries, ds.framework) for s in SPLITS]
    return DatasetSplits(ds.framework, ds.config, n_star, ds.rate, ds.dictionaries, *parts, meta=dict(ds.meta))


# ---------------------------------------------------------------------------
# persistence


def save_dictionary(d: Dictionary, path):
    fileformat.write(path, "dictionary", {
        "config": {"variant": d.variant.name, "size": d.size, "digest": d.digest},
        "codes": d.codes})


def _dictionary_from(codes, variant_name, digest) -> Dictionary:
    variant = Variant[variant_name]
    codes = np.asarray(codes)
    d = Dictionary(variant, [tuple(int(c) for c in row) for row in codes])
    if not np.array_equal(d.codes, codes):
        raise CorruptionError("dictionary entries are not in canonical order")
    if d.digest != digest:
        raise CorruptionError(f"dictionary digest {d.digest} does not match recorded {digest}")
    return d


def load_dictionary(path) -> Dictionary:
    sec = fileformat.read(path, "dictionary")
    cfg = sec["config"]
    return _dictionary_from(sec["codes"], cfg["variant"], cfg["digest"])


def _pack_samples(samples: list, prefix: str, n_star: int, window: int) -> dict:
    n = len(samples)
    out = {
        f"{prefix}world": np.stack([s.world for s in samples]) if n else np.zeros((0, n_star, window, 2)),
        f"{prefix}present": np.stack([s.present for s in samples]) if n else np.zeros((0, n_star, window), bool),
        f"{prefix}mask": np.stack([s.mask for s in samples]) if n else np.zeros((0, n_star, window), bool),
        f"{prefix}center_track": np.stack([s.center_track for s in samples]) if n else np.zeros((0, window, 2)),
        f"{prefix}window_start": np.array([s.window_start for s in samples], dtype=np.int64),
    }
    if n and samples[0].indices is not None:
        out[f"{prefix}indices"] = np.stack([s.indices for s in samples])
    for m in (samples[0].qtc_indices if n else {}):
        out[f"{prefix}qtc{m}"] = np.stack([s.qtc_indices[m] for s in samples])
    return out


def _unpack_samples(sec: dict, prefix: str, ids: dict, t_history: int) -> list:
    starts = sec[f"{prefix}window_start"]
    samples = []
    for i in range(len(starts)):
        qtc = {m: sec[f"{prefix}qtc{m}"][i] for m in (4, 6) if f"{prefix}qtc{m}" in sec}
        samples.append(ClusterSample(
            center=ids["centers"][i], window_start=int(starts[i]), members=tuple(ids["members"][i]),
            t_history=t_history, world=sec[f"{prefix}world"][i], present=sec[f"{prefix}present"][i].astype(bool),
            mask=sec[f"{prefix}mask"][i].astype(bool), center_track=sec[f"{prefix}center_track"][i],
            indices=sec[f"{prefix}indices"][i] if f"{prefix}indices" in sec else None, qtc_indices=qtc))
    return samples


def dataset_sections(ds: DatasetSplits) -> dict:
    c = ds.config
    sections = {"config": {
        "framework": ds.framework.value, "radius": c.radius, "t_history": c.t_history,
        "t_future": c.t_future, "stride": c.stride, "n_star": ds.n_star, "rate": ds.rate,
        "digests": {str(m): d for m, d in ds.digests.items()}, "meta": ds.meta,
        "ids": {s: {"centers": [x.center for x in ds.split(s)], "members": [list(x.members) for x in ds.split(s)]}
                for s in SPLITS},
    }}
    for m, d in ds.dictionaries.items():
        sections[f"dict{m}/codes"] = d.codes
    for s in SPLITS:
        sections.update(_pack_samples(ds.split(s), f"{s}/", ds.n_star, c.window))
    return sections


def save_dataset(ds: DatasetSplits, path):
    fileformat.write(path, "dataset", dataset_sections(ds))


def load_dataset(path) -> DatasetSplits:
    sec = fileformat.read(path, "dataset")
    cfg = sec["config"]
    variants = {4: "C1", 6: "C2"}
    dicts = {int(m): _dictionary_from(sec[f"dict{m}/codes"], variants[int(m)], dg) for m, dg in cfg["digests"].items()}
    config = ClusterConfig(cfg["radius"], cfg["t_history"], cfg["t_future"], cfg["stride"])
    parts = [_unpack_samples(sec, f"{s}/", cfg["ids"][s], config.t_history) for s in SPLITS]
    return DatasetSplits(Framework.parse(cfg["framework"]), config, cfg["n_star"], cfg["rate"], dicts, *parts,
                         meta=cfg["meta"])


@dataclass(eq=False)
class Checkpoint:
    """Model configuration, parameters and training history."""
    config: dict
    params: dict
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    digests: dict = field(default_factory=dict)  # symbol count -> dictionary digest

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.config == other.config and self.history == other.history and self.digests == other.digests
                and self.params.keys() == other.params.keys()
                and all(np.array_equal(self.params[k], other.params[k]) for k in self.params))


def save_checkpoint(ckpt: Checkpoint, path):
    sections = {"config": {"model": ckpt.config, "history": [list(map(float, h)) for h in ckpt.history],
                           "digests": {str(m): d for m, d in ckpt.digests.items()},
                           "params": list(ckpt.params)}}
    for k, v in ckpt.params.items():
        sections[f"param/{k}"] = np.asarray(v, dtype=np.float64)
    fileformat.write(path, "checkpoint", sections)


def load_checkpoint(path) -> Checkpoint:
    sec = fileformat.read(path, "checkpoint")
    cfg = sec["config"]
    params = {k: np.array(sec[f"param/{k}"]) for k in cfg["params"]}
    history = [(int(e), float(t), float(v)) for e, t, v in cfg["history"]]
    return Checkpoint(cfg["model"], params, history, {int(m): d for m, d in cfg["digests"].items()})


def check_compatible(ckpt: Checkpoint, ds: DatasetSplits):
    """Raise if a checkpoint cannot be applied to a dataset."""
    fw = Framework.parse(ckpt.config["framework"])
    if fw is not ds.framework:
        raise CompatibilityError(f"checkpoint framework {fw.value} does not match dataset framework {ds.framework.value}")
    if ckpt.config["n_star"] != ds.n_star:
        raise CompatibilityError(f"checkpoint expects n*={ckpt.config['n_star']}, dataset has {ds.n_star}")
    if (ckpt.config["t_history"], ckpt.config["t_future"]) != (ds.config.t_history, ds.config.t_future):
        raise CompatibilityError("checkpoint and dataset disagree on history/horizon lengths")
    for m, d in ckpt.digests.items():
        if m in ds.dictionaries and ds.dictionaries[m].digest != d:
            raise CompatibilityError(f"dictionary digest mismatch for {m}-symbol vectors")
