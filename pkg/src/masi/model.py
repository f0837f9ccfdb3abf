"""Input-attention encoder and temporal-attention decoder over cluster slots.

Shapes used throughout: ``B`` batch, ``S`` slots (``n_star`` for symbolic
frameworks; ``n_star + 1`` for the coordinate framework, whose slot 0 is the
center agent), ``E`` embedding size, ``H`` hidden size, ``O`` outputs per slot
(dictionary size, or 2 coordinates).

Encoder: at every history step the slots' embedded contents are weighted by
input attention, scored from the encoder state and a summary of each slot's
whole history, and the weighted sum drives an LSTM.

Decoder: an LSTM initialised from the final encoder state.  At every step
temporal attention over the encoder states gives a context vector; the
decoder input is a projection of all slots' previous labels.  Per-slot heads
map (decoder state, context, embedded previous label of the slot) to logits,
or to a coordinate step that is added to the previous coordinates.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import numerics as nx
from .cluster import Framework
from .dataset import Checkpoint, DatasetSplits
from .errors import CompatibilityError, NumericError, UsageError

log = logging.getLogger(__name__)

SYMBOLIC_DEFAULTS = dict(t_history=10, batch=10, epochs=120)
METRIC_DEFAULTS = dict(t_history=5, batch=5, epochs=80)


@dataclass(frozen=True)
class ModelConfig:
    framework: Framework
    n_star: int
    dict_size: int = 0
    t_history: int = 10
    t_future: int = 48
    hidden: int = 256
    embed_dim: int = 64
    batch: int = 10
    lr: float = 1e-3
    epochs: int = 120
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        object.__setattr__(self, "framework", Framework.parse(self.framework))
        if self.n_star < 1:
            raise UsageError("n_star must be at least 1")
        if self.framework.symbolic and self.dict_size < 2:
            raise UsageError("symbolic frameworks need the dictionary size")
        if min(self.t_history, self.t_future, self.hidden, self.embed_dim, self.batch) < 1 or self.epochs < 0:
            raise UsageError("sizes must be positive")
        if not self.lr > 0:
            raise UsageError("learning rate must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise UsageError("clip_norm must be positive or None")

    @classmethod
    def defaults(cls, framework, n_star, dict_size=0, **overrides) -> "ModelConfig":
        """Configuration with the standard hyperparameters of a framework."""
        framework = Framework.parse(framework)
        base = dict(SYMBOLIC_DEFAULTS if framework.symbolic else METRIC_DEFAULTS)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(framework, n_star, dict_size, **base)

    @classmethod
    def for_dataset(cls, ds: DatasetSplits, **overrides) -> "ModelConfig":
        dict_size = ds.dictionary.size if ds.framework.symbolic else 0
        overrides.setdefault("t_history", ds.config.t_history)
        overrides.setdefault("t_future", ds.config.t_future)
        return cls.defaults(ds.framework, ds.n_star, dict_size, **overrides)

    @property
    def slots(self) -> int:
        return self.n_star if self.framework.symbolic else self.n_star + 1

    @property
    def outputs(self) -> int:
        return self.dict_size if self.framework.symbolic else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["framework"] = self.framework.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# parameters


def param_shapes(config: ModelConfig) -> dict:
    S, E, H, O, Th = config.slots, config.embed_dim, config.hidden, config.outputs, config.t_history
    shapes = {}
    if config.framework.symbolic:
        shapes["embed"] = (config.dict_size, E)
    else:
        shapes["in_w"] = (2, E)
        shapes["in_b"] = (E,)
    shapes.update({
        "slot_embed": (S, E),
        "enc_att_w": (2 * H, H), "enc_att_u": (Th * E, H), "enc_att_b": (H,), "enc_att_v": (H,),
        "enc_w": (E + H, 4 * H), "enc_b": (4 * H,),
        "dec_att_w": (2 * H, H), "dec_att_u": (H, H), "dec_att_b": (H,), "dec_att_v": (H,),
        "dec_in_w": (S * E, E), "dec_in_b": (E,),
        "dec_w": (E + 2 * H, 4 * H), "dec_b": (4 * H,),
        "head_w": (S, 2 * H + E, O), "head_b": (S, O),
    })
    return shapes


_FAN_IN = {"embed": 0, "in_w": 0, "in_b": "in_w", "slot_embed": 0, "enc_att_w": 0, "enc_att_u": 0,
           "enc_att_b": "enc_att_w", "enc_att_v": 0, "enc_w": 0, "enc_b": "enc_w", "dec_att_w": 0,
           "dec_att_u": 0, "dec_att_b": "dec_att_w", "dec_att_v": 0, "dec_in_w": 0, "dec_in_b": "dec_in_w",
           "dec_w": 0, "dec_b": "dec_w", "head_w": 1, "head_b": "head_w"}


def init_params(config: ModelConfig) -> dict:
    """Uniform in +-1/sqrt(fan_in); biases use the fan-in of their weight.

    The coordinate head starts at zero, so an untrained metric model
    extrapolates at constant velocity.
    """
    rng = np.random.default_rng(config.seed)
    shapes = param_shapes(config)
    params = {}
    for name, shape in shapes.items():
        src = _FAN_IN[name]
        if isinstance(src, str):
            fan_in = shapes[src][0]
        else:
            fan_in = shape[src]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    if not config.framework.symbolic:
        params["head_w"][:] = 0.0
        params["head_b"][:] = 0.0
    return params


def _tensors(params: dict, graph: nx.Graph | None) -> dict:
    if graph is None:
        return {k: nx.constant(v) for k, v in params.items()}
    return {k: graph.param(k, v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Arrays for a list of samples.

    Symbolic: ``inputs`` ``(B, S, T_h)`` and ``targets`` ``(B, S, T_f)``
    dictionary indices.  Metric: coordinates ``(B, S, T, 2)`` relative to each
    sample's origin, with ``mask`` ``(B, S, T_f)`` selecting steps where the
    entity is present and ``velocity`` ``(B, S, 2)`` the last history
    displacement of each slot (zero unless present at both of the last two
    history steps).
    """
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None
    origins: np.ndarray | None = None
    velocity: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def make_batch(samples, config: ModelConfig) -> Batch:
    if not samples:
        raise UsageError("empty batch")
    Th, Tf = config.t_history, config.t_future
    s0 = samples[0]
    if s0.t_history != Th or s0.t_future != Tf or s0.n_star != config.n_star:
        raise CompatibilityError(
            f"sample shape (n*={s0.n_star}, T_h={s0.t_history}, T_f={s0.t_future}) does not match the model "
            f"(n*={config.n_star}, T_h={Th}, T_f={Tf})")
    if config.framework.symbolic:
        if s0.indices is None:
            raise CompatibilityError(f"framework {config.framework.value} needs symbolic samples")
        idx = np.stack([s.indices for s in samples])
        if idx.max() >= config.dict_size:
            raise UsageError("sample index exceeds the dictionary size")
        return Batch(idx[:, :, :Th], idx[:, :, Th:])
    rel = np.stack([s.relative() for s in samples])
    mask = np.stack([np.concatenate([np.ones((1, s.window), bool), s.present]) for s in samples])
    origins = np.stack([s.origin for s in samples])
    moving = (mask[:, :, Th - 1] & mask[:, :, Th - 2])[..., None]
    velocity = np.where(moving, rel[:, :, Th - 1] - rel[:, :, Th - 2], 0.0)
    return Batch(rel[:, :, :Th], rel[:, :, Th:], mask[:, :, Th:], origins, velocity)


# ---------------------------------------------------------------------------
# network pieces


def _embed_content(content, P, config):
    """Embedded slot contents plus slot identity: ``(..., S, [T,] E)``."""
    if config.framework.symbolic:
        emb = nx.take(P["embed"], content)
    else:
        emb = nx.matmul(nx.constant(content), P["in_w"]) + P["in_b"]
    return emb


def embed_inputs(batch: Batch, P: dict, config: ModelConfig):
    """Driving tensor ``(B, S, T_h, E)``: slot contents plus slot embeddings."""
    emb = _embed_content(batch.inputs, P, config)
    S, E = config.slots, config.embed_dim
    return emb + nx.reshape(P["slot_embed"], (S, 1, E))


def input_attention(h, c, summary, P):
    """Slot weights ``(B, S)`` from the encoder state and the slot summaries
    ``(B, S, A)``."""
    q = nx.concat([h, c], axis=-1) @ P["enc_att_w"] + P["enc_att_b"]
    scores = nx.tanh(summary + nx.reshape(q, (q.shape[0], 1, q.shape[1]))) @ P["enc_att_v"]
    return nx.softmax(scores, axis=-1)


def temporal_attention(d, s, enc_states, keys, P):
    """Context ``(B, H)`` and weights ``(B, T_h)`` over the encoder states."""
    q = nx.concat([d, s], axis=-1) @ P["dec_att_w"] + P["dec_att_b"]
    scores = nx.tanh(keys + nx.reshape(q, (q.shape[0], 1, q.shape[1]))) @ P["dec_att_v"]
    beta = nx.softmax(scores, axis=-1)
    B, T, H = enc_states.shape
    ctx = nx.reshape(nx.reshape(beta, (B, 1, T)) @ enc_states, (B, H))
    return ctx, beta


@dataclass
class AttentionTrace:
    alpha: list  # per history step, (B, S)
    beta: list  # per horizon step, (B, T_h)


def forward(batch: Batch, params: dict, config: ModelConfig, teacher: bool = True,
            graph: nx.Graph | None = None, trace: AttentionTrace | None = None):
    """Outputs ``(B, S, T_f, O)``: logits, or coordinates relative to the origin.

    With ``teacher=True`` the decoder sees the true previous labels; otherwise
    its own previous predictions (argmax index, or predicted coordinates).
    """
    P = params if isinstance(next(iter(params.values())), nx.Tensor) else _tensors(params, graph)
    B = batch.size
    S, E, H, Th, Tf = config.slots, config.embed_dim, config.hidden, config.t_history, config.t_future
    if batch.inputs.shape[1:3] != (S, Th):
        raise UsageError(f"batch slots/steps {batch.inputs.shape[1:3]} do not match the model ({S}, {Th})")
    X = embed_inputs(batch, P, config)
    summary = nx.reshape(X, (B, S, Th * E)) @ P["enc_att_u"]
    h = nx.constant(np.zeros((B, H)))
    c = h
    states = []
    for t in range(Th):
        alpha = input_attention(h, c, summary, P)
        x_t = nx.reshape(nx.reshape(alpha, (B, 1, S)) @ X[:, :, t, :], (B, E))
        h, c = nx.lstm_cell(x_t, h, c, P["enc_w"], P["enc_b"])
        states.append(h)
        if trace is not None:
            trace.alpha.append(alpha.data)
    enc = nx.stack(states, axis=1)
    keys = enc @ P["dec_att_u"]
    d, s = h, c
    slot_e = P["slot_embed"]
    symbolic = config.framework.symbolic
    prev = batch.inputs[:, :, -1]  # (B, S) indices or (B, S, 2) coordinates
    prev_t = None if symbolic else nx.constant(prev)
    # coordinate steps are corrections to constant-velocity extrapolation
    vel = None if symbolic else nx.constant(batch.velocity)
    head_w, head_b = P["head_w"], P["head_b"]
    feats, bases, outs = [], [], []
    for tau in range(Tf):
        ctx, beta = temporal_attention(d, s, enc, keys, P)
        if trace is not None:
            trace.beta.append(beta.data)
        e_prev = (_embed_content(prev, P, config) if symbolic else prev_t @ P["in_w"] + P["in_b"]) + slot_e
        din = nx.tanh(nx.reshape(e_prev, (B, S * E)) @ P["dec_in_w"] + P["dec_in_b"])
        d, s = nx.lstm_cell(nx.concat([din, ctx], axis=-1), d, s, P["dec_w"], P["dec_b"])
        shared = nx.concat([d, ctx], axis=-1)  # (B, 2H)
        feat = nx.concat([nx.broadcast_to(nx.reshape(shared, (B, 1, 2 * H)), (B, S, 2 * H)), e_prev], axis=-1)
        if teacher:
            # labels do not depend on outputs: apply the head once after the loop
            feats.append(feat)
            if not symbolic:
                bases.append(prev_t + vel)
                prev_t = nx.constant(batch.targets[:, :, tau])
            else:
                prev = batch.targets[:, :, tau]
            continue
        out = nx.transpose(nx.transpose(feat, (1, 0, 2)) @ head_w, (1, 0, 2)) + head_b  # (B, S, O)
        if symbolic:
            outs.append(out)
            prev = np.argmax(out.data, axis=-1)
        else:
            prev_t = prev_t + vel + out
            outs.append(prev_t)
    if not teacher:
        return nx.stack(outs, axis=2)
    F = feats[0].shape[-1]
    allf = nx.reshape(nx.transpose(nx.stack(feats, axis=2), (1, 2, 0, 3)), (S, Tf * B, F))
    out = nx.reshape(allf @ head_w, (S, Tf, B, -1))
    out = nx.transpose(out, (2, 0, 1, 3)) + nx.reshape(head_b, (1, S, 1, -1))  # (B, S, Tf, O)
    if symbolic:
        return out
    return nx.stack(bases, axis=2) + out


def loss(predictions, batch: Batch, config: ModelConfig):
    """Mean cross-entropy (symbolic) or masked RMSE over coordinates (metric)."""
    if config.framework.symbolic:
        return nx.cross_entropy(predictions, batch.targets)
    m = batch.mask[..., None].astype(float)
    count = max(float(m.sum()) * 2.0, 1.0)
    sq = nx.square(predictions - nx.constant(batch.targets)) * m
    return nx.sqrt(nx.tsum(sq) * (1.0 / count))


def batch_loss(samples, params, config, graph=None):
    batch = make_batch(samples, config)
    return loss(forward(batch, params, config, teacher=True, graph=graph), batch, config)


# ---------------------------------------------------------------------------
# training and inference


@dataclass
class TrainResult:
    params: dict
    history: list  # (epoch, train_loss, val_loss)
    best_epoch: int
    seconds: float

    def checkpoint(self, config: ModelConfig, digests: dict | None = None) -> Checkpoint:
        return Checkpoint(config.to_dict(), self.params, self.history, digests or {})


def _batches(n, size, order):
    return [order[i:i + size] for i in range(0, n, size)]


def evaluate_loss(samples, params, config: ModelConfig) -> float:
    """Sample-weighted teacher-forced loss without building a graph."""
    if not samples:
        return float("nan")
    total = 0.0
    for idx in _batches(len(samples), config.batch, np.arange(len(samples))):
        total += float(batch_loss([samples[i] for i in idx], params, config).data) * len(idx)
    return total / len(samples)


def fit(dataset: DatasetSplits, config: ModelConfig, params: dict | None = None, progress=None) -> TrainResult:
    """Mini-batch Adam training; returns the parameters with the best
    validation loss (training loss when there is no validation split)."""
    if dataset.framework is not config.framework:
        raise CompatibilityError(
            f"dataset framework {dataset.framework.value} does not match model {config.framework.value}")
    train, val = dataset.train, dataset.validation
    if not train:
        raise UsageError("empty training split")
    params = {k: v.copy() for k, v in (params or init_params(config)).items()}
    rng = np.random.default_rng(config.seed)
    state = nx.AdamState()
    history, best, best_params, best_epoch = [], np.inf, None, 0
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for idx in _batches(len(train), config.batch, order):
            graph = nx.Graph()
            value = batch_loss([train[i] for i in idx], params, config, graph)
            if not np.isfinite(value.data):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            grads = nx.backward(graph, value)
            grads, _ = nx.clip_global_norm(grads, config.clip_norm)
            nx.adam_step(params, grads, state, config.lr)
            total += float(value.data) * len(idx)
        train_loss = total / len(train)
        val_loss = evaluate_loss(val, params, config) if val else train_loss
        history.append((epoch, train_loss, val_loss))
        if val_loss < best:
            best, best_epoch = val_loss, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        if progress is not None:
            progress(epoch, train_loss, val_loss)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
    if best_params is None:
        best_params = params
    return TrainResult(best_params, history, best_epoch, time.perf_counter() - start)


def predict(samples, params, config: ModelConfig, trace: AttentionTrace | None = None) -> np.ndarray:
    """Greedy predictions for a list of samples.

    Symbolic: indices ``(B, n*, T_f)``.  Metric: world coordinates
    ``(B, n* + 1, T_f, 2)`` with the center agent in slot 0.
    """
    batch = make_batch(samples, config)
    out = forward(batch, params, config, teacher=False, trace=trace).data
    if config.framework.symbolic:
        return np.argmax(out, axis=-1)
    return out + batch.origins[:, None, None, :]


def predict_all(samples, params, config: ModelConfig) -> np.ndarray:
    parts = [predict([samples[i] for i in idx], params, config)
             for idx in _batches(len(samples), config.batch, np.arange(len(samples)))]
    return np.concatenate(parts) if parts else np.zeros((0,))


def attention_trace(samples, params, config: ModelConfig) -> AttentionTrace:
    trace = AttentionTrace([], [])
    predict(samples, params, config, trace)
    return trace


def model_from_checkpoint(ckpt: Checkpoint) -> tuple:
    config = ModelConfig.from_dict(ckpt.config)
    expected = param_shapes(config)
    for k, shape in expected.items():
        if k not in ckpt.params or ckpt.params[k].shape != shape:
            raise CompatibilityError(f"checkpoint parameter {k} is missing or has the wrong shape")
    return config, ckpt.params


def with_overrides(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


def gradient_check_model(framework, hidden=8, n_star=3, t_history=4, t_future=3, embed_dim=8, batch=4,
                         seed=0, step=1e-4, tolerance=1e-4, max_entries=24) -> nx.GradCheckReport:
    """Finite-difference check of every parameter block of a small model
    trained on a four-agent synthetic scene."""
    from .cluster import ClusterConfig
    from .dataset import make_dataset
    from .synth import ScenarioSpec, generate_scenario

    scene = generate_scenario(ScenarioSpec(n_agents=4, duration=400, seed=3, arena=(0.0, 0.0, 4.0, 4.0)))
    ds = make_dataset(scene, framework, ClusterConfig(3.7, t_history, t_future, 7), n_star=n_star)
    config = ModelConfig.for_dataset(ds, hidden=hidden, embed_dim=embed_dim, batch=batch, seed=seed)
    params = init_params(config)
    if not config.framework.symbolic:
        # a zero head would leave every upstream gradient at zero
        rng = np.random.default_rng(seed + 1)
        for k in ("head_w", "head_b"):
            params[k] = rng.uniform(-0.5, 0.5, params[k].shape)
    samples = ds.train[:batch]
    return nx.gradient_check(lambda p: batch_loss(samples, p, config, nx.Graph()), params,
                             tolerance=tolerance, step=step, max_entries=max_entries, seed=seed)
