"""Conceptual-distance evaluation of predicted QTC streams.

Every framework is scored in dictionary-index space: predicted indices are
compared with the label indices through the dictionary's conceptual distance
table.  The coordinate framework first turns predicted coordinates back into
QTC indices with :func:`extract_qtc_from_coords`.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import model as mdl
from .cluster import ClusterSample, Framework, distance
from .dataset import DatasetSplits, pad_dataset
from .errors import CompatibilityError, UsageError
from .qtc import DEFAULT_TOLERANCE, Dictionary, ToleranceSet, Variant, pair_series

TAGS = {(Framework.QTC4, 4): "F^QTC-4", (Framework.QTC6, 6): "F^QTC-6",
        (Framework.TS, 4): "F^ts,1", (Framework.TS, 6): "F^ts,2"}


@dataclass(frozen=True)
class EvalReport:
    framework: str  # row tag, e.g. "F^QTC-6" or "F^ts,1"
    horizon: float  # seconds
    radius: float  # meters
    mu: float
    sigma: float
    baseline_mu: float
    n_samples: int

    def __post_init__(self):
        values = (self.mu, self.sigma, self.baseline_mu)
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise UsageError(f"report values must be finite and non-negative: {values}")
        if self.n_samples < 1:
            raise UsageError("a report needs at least one sample")

    def row(self) -> dict:
        return {"framework": self.framework, "horizon": self.horizon, "radius": self.radius, "mu": self.mu,
                "sigma": self.sigma, "baseline_mu": self.baseline_mu, "n_samples": self.n_samples}


# ---------------------------------------------------------------------------
# labels and coordinate post-processing


def label_indices(samples, variant) -> np.ndarray:
    """Label indices ``(N, n*, T_f)`` of one variant."""
    m = Variant.parse(variant).length
    out = []
    for s in samples:
        idx = s.indices if s.indices is not None and not s.qtc_indices else s.qtc_indices.get(m)
        if idx is None or idx.shape[1] != s.window:
            raise CompatibilityError(f"samples carry no {m}-symbol labels")
        out.append(idx[:, s.t_history:])
    return np.stack(out)


def extract_qtc_from_coords(coords, sample: ClusterSample, dictionary: Dictionary, radius: float,
                            rate: float = 15.0, tolerance: ToleranceSet = DEFAULT_TOLERANCE) -> np.ndarray:
    """Indices ``(n*, T_f)`` recomputed from predicted world coordinates.

    ``coords`` is ``(n* + 1, T_f, 2)`` with the center agent in slot 0.  The
    observed history is prepended, so kinematics at the first label step see
    the last observed position.  A slot step is impossible when the slot is
    fake, the member is absent, or the predicted pair distance exceeds the
    radius (non-finite coordinates count as outside).  Vectors outside the
    dictionary snap to the nearest entry.
    """
    coords = np.asarray(coords, dtype=float)
    Th, W, n = sample.t_history, sample.window, sample.n_star
    if coords.shape != (n + 1, W - Th, 2):
        raise UsageError(f"expected coordinates of shape {(n + 1, W - Th, 2)}, got {coords.shape}")
    out = np.full((n, W - Th), dictionary.impossible_index, dtype=np.int64)
    real = len(sample.members)
    if real == 0:
        return out
    center = np.concatenate([sample.center_track[:Th], coords[0]])  # (W, 2)
    members = np.concatenate([sample.world[:real, :Th], coords[1:real + 1]], axis=1).transpose(1, 0, 2)
    present = sample.present[:real].T  # (W, real)
    centers = np.broadcast_to(center[:, None], members.shape)
    with np.errstate(invalid="ignore"):
        codes = pair_series(centers, members, np.ones(present.shape, dtype=bool), present, rate,
                            dictionary.variant, tolerance, degenerate="zero")
        inside = present & (distance(centers, members) <= radius)
    idx = dictionary.indices(np.where(inside[..., None], codes, 0), snap=True)
    out[:real] = np.where(inside, idx, dictionary.impossible_index)[Th:].T
    return out


def extract_all(coords, samples, dictionary, radius, rate, tolerance=DEFAULT_TOLERANCE) -> np.ndarray:
    """:func:`extract_qtc_from_coords` over a list of samples."""
    return np.stack([extract_qtc_from_coords(c, s, dictionary, radius, rate, tolerance)
                     for c, s in zip(coords, samples)])


def ground_truth_coords(sample: ClusterSample) -> np.ndarray:
    """World coordinates ``(n* + 1, T_f, 2)`` of the label steps, center first."""
    Th = sample.t_history
    return np.concatenate([sample.center_track[None, Th:], sample.world[:, Th:]])


# ---------------------------------------------------------------------------
# baselines


def persistence_baseline(sample: ClusterSample, framework, variant=None) -> np.ndarray:
    """Symbolic: every slot repeats its last history index, ``(n*, T_f)``.

    Coordinates: constant-velocity extrapolation of the last two history
    frames, ``(n* + 1, T_f, 2)`` world coordinates with the center first.  A
    member seen only once keeps its last position; a member never seen in
    the history gets non-finite coordinates.
    """
    framework = Framework.parse(framework)
    Th, Tf = sample.t_history, sample.t_future
    if framework.symbolic or variant is not None:
        if sample.indices is not None and framework.symbolic:
            hist = sample.indices[:, :Th]
        else:
            hist = sample.qtc_indices[Variant.parse(variant).length][:, :Th]
        return np.repeat(hist[:, -1:], Tf, axis=1)
    steps = np.arange(1, Tf + 1)[:, None]
    ct = sample.center_track
    out = np.empty((sample.n_star + 1, Tf, 2))
    out[0] = ct[Th - 1] + steps * (ct[Th - 1] - ct[Th - 2])
    for k in range(sample.n_star):
        seen = np.nonzero(sample.present[k, :Th])[0]
        if not len(seen):
            out[k + 1] = np.nan
            continue
        last = seen[-1]
        vel = sample.world[k, last] - sample.world[k, last - 1] if last > 0 and sample.present[k, last - 1] else 0.0
        out[k + 1] = sample.world[k, last] + (steps + (Th - 1 - last)) * vel
    return out


# ---------------------------------------------------------------------------
# scoring


def batch_scores(pred, labels, dictionary: Dictionary, batch: int) -> np.ndarray:
    """Total conceptual distance per batch divided by ``n* * T_f * B``.

    Batches are consecutive blocks of ``batch`` samples; the last one may be
    shorter and is normalized by its own size.
    """
    pred, labels = np.asarray(pred), np.asarray(labels)
    if pred.shape != labels.shape or pred.ndim != 3:
        raise UsageError(f"prediction shape {pred.shape} does not match labels {labels.shape}")
    if len(pred) == 0:
        raise UsageError("nothing to score")
    d = dictionary.distance_table[pred, labels]  # (N, n*, T_f)
    per_sample = d.sum(axis=(1, 2))
    n, tf = pred.shape[1], pred.shape[2]
    return np.array([per_sample[i:i + batch].sum() / (n * tf * len(per_sample[i:i + batch]))
                     for i in range(0, len(per_sample), batch)])


def summarize(scores) -> tuple:
    """Mean and (population) standard deviation of per-batch scores."""
    scores = np.asarray(scores, dtype=float)
    return float(scores.mean()), float(scores.std())


# ---------------------------------------------------------------------------
# model evaluation


def _map_batches(fn, samples, batch, threads):
    chunks = [samples[i:i + batch] for i in range(0, len(samples), batch)]
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts)


def evaluate(dataset: DatasetSplits, params: dict, config, split: str = "test", samples=None,
             threads: int = 1) -> list:
    """Reports for one trained model: one for a symbolic framework, one per
    QTC variant (``F^ts,1`` and ``F^ts,2``) for the coordinate framework."""
    samples = dataset.split(split) if samples is None else samples
    if not samples:
        raise UsageError(f"split {split!r} is empty")
    fw, cc = dataset.framework, dataset.config
    if fw is not config.framework:
        raise CompatibilityError(f"model framework {config.framework.value} does not match dataset {fw.value}")
    horizon = cc.t_future / dataset.rate
    pred = _map_batches(lambda c: mdl.predict(c, params, config), samples, config.batch, threads)
    reports = []
    for m, dct in dataset.dictionaries.items():
        variant = Variant.C1 if m == 4 else Variant.C2
        labels = label_indices(samples, variant)
        if fw.symbolic:
            got = pred
            base = np.stack([persistence_baseline(s, fw) for s in samples])
        else:
            got = extract_all(pred, samples, dct, cc.radius, dataset.rate)
            base_coords = [persistence_baseline(s, fw) for s in samples]
            base = extract_all(base_coords, samples, dct, cc.radius, dataset.rate)
        mu, sigma = summarize(batch_scores(got, labels, dct, config.batch))
        base_mu, _ = summarize(batch_scores(base, labels, dct, config.batch))
        reports.append(EvalReport(TAGS[(fw, m)], horizon, cc.radius, mu, sigma, base_mu, len(samples)))
    return reports


@dataclass
class DomainShiftResult:
    in_domain: list  # reports on the 10% test split of the training family
    shifted: list  # reports on every sample of the other family
    training: mdl.TrainResult
    config: mdl.ModelConfig


def domain_shift_eval(train_set: DatasetSplits, eval_set: DatasetSplits, config=None, params=None,
                      threads: int = 1, **overrides) -> DomainShiftResult:
    """Train on ``train_set`` and evaluate frozen parameters on its test split
    and on all of ``eval_set``.  Both are padded to the larger ``n*``."""
    if train_set.framework is not eval_set.framework:
        raise CompatibilityError("the two datasets use different frameworks")
    if train_set.digests != eval_set.digests:
        raise CompatibilityError("the two datasets were built with different dictionaries")
    a_cfg, b_cfg = train_set.config, eval_set.config
    if (a_cfg.t_history, a_cfg.t_future) != (b_cfg.t_history, b_cfg.t_future):
        raise CompatibilityError("the two datasets disagree on history/horizon lengths")
    if a_cfg.radius != b_cfg.radius:
        raise CompatibilityError("the two datasets use different cluster radii")
    n_star = max(train_set.n_star, eval_set.n_star)
    a, b = pad_dataset(train_set, n_star), pad_dataset(eval_set, n_star)
    if config is None:
        config = mdl.ModelConfig.for_dataset(a, **overrides)
    else:
        config = replace(config, n_star=n_star)
    result = mdl.fit(a, config, params)
    everything = b.train + b.validation + b.test
    return DomainShiftResult(evaluate(a, result.params, config, "test", threads=threads),
                             evaluate(b, result.params, config, samples=everything, threads=threads),
                             result, config)


# ---------------------------------------------------------------------------
# comparison matrix


@dataclass
class MatrixResult:
    reports: list  # EvalReport rows
    histories: dict  # (framework value, t_future, radius) -> [(epoch, train, val)]
    datasets: dict  # same keys -> DatasetSplits


def comparison_matrix(trajset, frameworks=("qtc4", "qtc6", "ts"), horizons=(48, 72), radii=(1.2, 3.7),
                      stride: int = 1, split_seed: int = 0, threads: int = 1, progress=None,
                      **model_overrides) -> MatrixResult:
    """Train and evaluate every framework at every (horizon, radius).

    ``model_overrides`` replace the framework defaults (for example
    ``hidden=64, epochs=20``).  ``progress`` is called with a message string
    after each run.
    """
    from .cluster import ClusterConfig
    from .dataset import make_dataset

    reports, histories, datasets = [], {}, {}
    for fw in map(Framework.parse, frameworks):
        base = mdl.SYMBOLIC_DEFAULTS if fw.symbolic else mdl.METRIC_DEFAULTS
        t_history = model_overrides.get("t_history") or base["t_history"]
        for radius in radii:
            for tf in horizons:
                ds = make_dataset(trajset, fw, ClusterConfig(radius, t_history, tf, stride), split_seed)
                config = mdl.ModelConfig.for_dataset(ds, **model_overrides)
                result = mdl.fit(ds, config)
                rows = evaluate(ds, result.params, config, threads=threads)
                key = (fw.value, tf, radius)
                histories[key], datasets[key] = result.history, ds
                reports.extend(rows)
                if progress is not None:
                    progress(f"{fw.value} T_f={tf} R={radius}: " + ", ".join(
                        f"{r.framework} mu={r.mu:.3f} baseline={r.baseline_mu:.3f}" for r in rows)
                        + f" ({result.seconds:.0f}s, {len(ds.train)} train samples)")
    return MatrixResult(reports, histories, datasets)
