"""Small dense-tensor autodiff on top of numpy, float64 throughout.

Every operation on a :class:`Tensor` that depends on a trainable leaf is
recorded on the owning :class:`Graph` in creation order, so a reverse sweep
over ``graph.nodes`` is a valid topological order.  Operations whose inputs
are all constants are evaluated eagerly and not recorded, which makes
inference cheap without a separate no-grad mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, UsageError

DTYPE = np.float64


class Graph:
    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}
        self.backward_evals = 0

    def param(self, name: str, value) -> "Tensor":
        if name in self.params:
            raise UsageError(f"parameter {name!r} registered twice")
        t = Tensor(np.asarray(value, dtype=DTYPE), self, requires_grad=True)
        t.name = name
        self.params[name] = t
        return t

    def constant(self, value) -> "Tensor":
        return Tensor(np.asarray(value, dtype=DTYPE), self, requires_grad=False)


class Tensor:
    __slots__ = ("data", "grad", "graph", "parents", "backward_fn", "requires_grad", "name", "op")

    def __init__(self, data, graph: Graph | None = None, requires_grad=False):
        self.data = data
        self.grad = None
        self.graph = graph
        self.parents = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.name = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def constant(value) -> Tensor:
    """A graph-less constant (never receives a gradient)."""
    return Tensor(np.asarray(value, dtype=DTYPE))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _graph_of(inputs) -> Graph | None:
    graph = None
    for t in inputs:
        if t.requires_grad:
            if graph is not None and t.graph is not graph:
                raise UsageError("tensors from different graphs combined")
            graph = t.graph
    return graph


def apply_op(name: str, data, parents, backward_fn: Callable) -> Tensor:
    """Wrap a computed value as the output of an op.

    ``backward_fn(g)`` receives the upstream gradient and must return one
    gradient (or ``None``) per parent, in order.
    """
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {name}")
    parents = tuple(parents)
    graph = _graph_of(parents)
    if graph is None:
        out = Tensor(data)
        out.op = name
        return out
    out = Tensor(data, graph, requires_grad=True)
    out.parents = parents
    out.backward_fn = backward_fn
    out.op = name
    graph.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return apply_op("add", a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return apply_op("sub", a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return apply_op("mul", a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return apply_op("div", out, (a, b),
                    lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return apply_op("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = _as_tensor(x)
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return apply_op("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x):
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return apply_op("exp", y, (x,), lambda g: (g * y,))


def log(x):
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    return apply_op("log", y, (x,), lambda g: (g / x.data,))


def sqrt(x):
    x = _as_tensor(x)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(x.data)
    with np.errstate(divide="ignore"):
        return apply_op("sqrt", y, (x,), lambda g: (g * 0.5 / y,))


def square(x):
    x = _as_tensor(x)
    return apply_op("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    """``a @ b`` with numpy broadcasting; ``b`` may be a vector."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise UsageError("matmul needs at least 1-D operands")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise UsageError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    if b.ndim == 1:
        def backward(g):
            ga = g[..., None] * b.data
            gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            return ga, gb
    elif a.ndim == 1:
        def backward(g):
            ga = (g[..., None, :] @ np.swapaxes(b.data, -1, -2))[..., 0, :]
            gb = a.data[:, None] * g[..., None, :]
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    else:
        def backward(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return apply_op("matmul", out, (a, b), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    return apply_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = _as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return apply_op("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def _is_basic(key):
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in items)


def getitem(x, key):
    x = _as_tensor(x)
    basic = _is_basic(key)

    def backward(g):
        z = np.zeros_like(x.data)
        if basic:
            z[key] = g
        else:
            np.add.at(z, key, g)
        return (z,)
    return apply_op("getitem", x.data[key], (x,), backward)


def take(table, indices):
    """Rows of ``table`` selected by an integer array (embedding lookup)."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise UsageError(f"index out of range for table with {table.shape[0]} rows")

    def backward(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx, g)
        return (z,)
    return apply_op("take", table.data[idx], (table,), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return apply_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                    lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))
    return apply_op("stack", np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def broadcast_to(x, shape):
    x = _as_tensor(x)
    return apply_op("broadcast", np.broadcast_to(x.data, shape).copy(), (x,),
                    lambda g: (_unbroadcast(g, x.shape),))


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return apply_op("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# probability


def softmax(v, axis=-1):
    v = _as_tensor(v)
    z = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return apply_op("softmax", y, (v,), lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def cross_entropy(logits, targets):
    """Mean of ``-log softmax(logits)[target]`` over all leading positions."""
    logits = _as_tensor(logits)
    t = np.asarray(targets)
    K = logits.shape[-1]
    if t.shape != logits.shape[:-1]:
        raise UsageError(f"targets shape {t.shape} does not match logits {logits.shape}")
    if t.size and (t.min() < 0 or t.max() >= K):
        raise UsageError(f"class index out of range [0, {K})")
    flat = logits.data.reshape(-1, K)
    tf = t.reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = len(tf)
    picked = z[np.arange(n), tf]
    loss = np.mean(lse - picked)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), tf] -= 1.0
        return ((g / n) * p.reshape(logits.shape),)
    return apply_op("cross_entropy", np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# recurrent cell


def _lstm_pointwise(z, c, hd):
    """Fused gate nonlinearities; returns ``concat([h', c'], -1)``."""
    zd = z.data
    i = 0.5 * (np.tanh(0.5 * zd[..., :hd]) + 1.0)
    f = 0.5 * (np.tanh(0.5 * zd[..., hd:2 * hd]) + 1.0)
    o = 0.5 * (np.tanh(0.5 * zd[..., 2 * hd:3 * hd]) + 1.0)
    gg = np.tanh(zd[..., 3 * hd:])
    c2 = f * c.data + i * gg
    tc = np.tanh(c2)
    h2 = o * tc

    def backward(g):
        gh, gc = g[..., :hd], g[..., hd:]
        gc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc * gg * i * (1.0 - i),
            gc * c.data * f * (1.0 - f),
            gh * tc * o * (1.0 - o),
            gc * i * (1.0 - gg * gg),
        ], axis=-1)
        return dz, _unbroadcast(gc * f, c.shape)
    return apply_op("lstm", np.concatenate([h2, c2], axis=-1), (z, c), backward)


def lstm_cell(x, h, c, weight, bias):
    """One LSTM step.  ``weight`` is ``(in + hidden, 4 * hidden)`` with gate
    blocks ordered input, forget, output, candidate."""
    x, h, c, weight, bias = (_as_tensor(t) for t in (x, h, c, weight, bias))
    hd = h.shape[-1]
    if c.shape != h.shape:
        raise UsageError(f"cell state shape {c.shape} != hidden shape {h.shape}")
    if weight.shape != (x.shape[-1] + hd, 4 * hd) or bias.shape != (4 * hd,):
        raise UsageError(f"LSTM weights {weight.shape}/{bias.shape} do not fit input {x.shape[-1]}, hidden {hd}")
    z = concat([x, h], axis=-1) @ weight + bias
    hc = _lstm_pointwise(z, c, hd)
    return hc[..., :hd], hc[..., hd:]


# ---------------------------------------------------------------------------
# reverse sweep


def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(param) for every registered parameter.

    Parameters that do not influence the loss get zero gradients.
    """
    if loss.size != 1:
        raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
    for t in graph.nodes:
        t.grad = None
    for t in graph.params.values():
        t.grad = None
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(graph.nodes):
            graph.backward_evals += 1
            if node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in graph.params.items()}


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise UsageError(f"gradient shape {g.shape} != parameter {name} shape {params[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def clip_global_norm(grads: dict, max_norm: float | None):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    tolerance: float
    blocks: dict  # name -> max relative error
    checked: dict  # name -> number of entries compared

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.blocks.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def max_error(self) -> float:
        return max(self.blocks.values()) if self.blocks else 0.0

    def lines(self):
        for name, err in self.blocks.items():
            flag = "ok" if err < self.tolerance else "FAIL"
            yield f"{name:<14} entries={self.checked[name]:<5d} max_rel_err={err:.3e} {flag}"


def relative_error(a, n, floor=1e-6):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(model_closure: Callable[[dict], Tensor], params: dict, tolerance=1e-4, step=1e-5,
                   max_entries: int | None = 24, seed=0) -> GradCheckReport:
    """Compare analytic gradients with central differences, block by block.

    ``model_closure(params)`` must build a fresh graph registering each array
    of ``params`` under its key and return the scalar loss.  Blocks larger
    than ``max_entries`` are checked on a seeded random subset plus the entry
    with the largest analytic gradient.
    """
    loss = model_closure(params)
    analytic = backward(loss.graph, loss) if loss.graph is not None else {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(seed)
    blocks, checked = {}, {}
    for name, value in params.items():
        flat = value.reshape(-1)
        if not np.shares_memory(flat, value):
            raise UsageError(f"parameter {name!r} must be a contiguous array")
        ga = analytic[name].reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = np.unique(np.append(rng.choice(flat.size, max_entries, replace=False), np.argmax(np.abs(ga))))
        errs = []
        for k in idx:
            orig = flat[k]
            flat[k] = orig + step
            fp = float(model_closure(params).data)
            flat[k] = orig - step
            fm = float(model_closure(params).data)
            flat[k] = orig
            errs.append(relative_error(ga[k], (fp - fm) / (2 * step)))
        blocks[name] = float(np.max(errs)) if errs else 0.0
        checked[name] = len(idx)
    return GradCheckReport(tolerance, blocks, checked)
