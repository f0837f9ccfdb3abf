from dataclasses import replace

import numpy as np
import pytest

from masi import model as mdl
from masi import numerics as nx
from masi.dataset import DatasetSplits
from masi.errors import CompatibilityError, UsageError


def small(ds, **kw):
    base = dict(hidden=8, embed_dim=4, batch=4, epochs=3)
    base.update(kw)
    return mdl.ModelConfig.for_dataset(ds, **base)


@pytest.fixture(scope="module")
def sym(qtc6_set):
    cfg = small(qtc6_set)
    return cfg, mdl.init_params(cfg), mdl.make_batch(qtc6_set.train[:4], cfg)


@pytest.fixture(scope="module")
def met(ts_set):
    cfg = small(ts_set)
    return cfg, mdl.init_params(cfg), mdl.make_batch(ts_set.train[:4], cfg)


# ---------------------------------------------------------------------------
# configuration


def test_framework_defaults():
    s = mdl.ModelConfig.defaults("qtc4", 3, 82)
    assert (s.t_history, s.batch, s.epochs, s.hidden, s.lr, s.clip_norm) == (10, 10, 120, 256, 1e-3, 5.0)
    m = mdl.ModelConfig.defaults("ts", 3)
    assert (m.t_history, m.batch, m.epochs, m.hidden) == (5, 5, 80, 256)
    assert m.slots == 4 and m.outputs == 2 and s.slots == 3 and s.outputs == 82


def test_config_validation_and_round_trip():
    with pytest.raises(UsageError):
        mdl.ModelConfig("qtc4", 3)  # no dictionary size
    with pytest.raises(UsageError):
        mdl.ModelConfig("ts", 0)
    with pytest.raises(UsageError):
        mdl.ModelConfig("ts", 2, lr=0.0)
    cfg = mdl.ModelConfig.defaults("qtc6", 5, 586, hidden=16, clip_norm=None)
    assert mdl.ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_parameter_shapes_follow_the_config(sym):
    cfg, params, _ = sym
    shapes = mdl.param_shapes(cfg)
    assert {k: v.shape for k, v in params.items()} == shapes
    assert shapes["embed"] == (cfg.dict_size, cfg.embed_dim)
    assert shapes["head_w"] == (cfg.n_star, 2 * cfg.hidden + cfg.embed_dim, cfg.dict_size)


def test_initialization_is_bounded_and_seeded(sym):
    cfg, params, _ = sym
    assert np.abs(params["enc_w"]).max() <= 1 / np.sqrt(cfg.embed_dim + cfg.hidden)
    again = mdl.init_params(cfg)
    assert all(np.array_equal(params[k], again[k]) for k in params)
    other = mdl.init_params(mdl.with_overrides(cfg, seed=1))
    assert not np.array_equal(params["enc_w"], other["enc_w"])


# ---------------------------------------------------------------------------
# embedding and attention


def test_embedding_shapes_and_slot_identity(sym):
    cfg, params, batch = sym
    P = mdl._tensors(params, None)
    X = mdl.embed_inputs(batch, P, cfg)
    assert X.shape == (batch.size, cfg.n_star, cfg.t_history, cfg.embed_dim)
    same = np.zeros((1, 2), dtype=int) + 5
    raw = mdl._embed_content(same, P, cfg).data
    np.testing.assert_array_equal(raw[0, 0], raw[0, 1])
    with_slots = raw[0] + params["slot_embed"][:2]
    assert not np.allclose(with_slots[0], with_slots[1])


def test_metric_origin_input_embeds_to_zero(met):
    cfg, params, _ = met
    P = mdl._tensors(dict(params, in_b=np.zeros_like(params["in_b"])), None)
    assert not mdl._embed_content(np.zeros((1, 3, 2)), P, cfg).data.any()


def _attention_params(rng, H=5, A=5):
    return {k: nx.constant(v) for k, v in {
        "enc_att_w": rng.normal(size=(2 * H, A)), "enc_att_b": rng.normal(size=A), "enc_att_v": rng.normal(size=A),
        "dec_att_w": rng.normal(size=(2 * H, A)), "dec_att_b": rng.normal(size=A), "dec_att_v": rng.normal(size=A),
    }.items()}


def test_input_attention_is_a_simplex_and_uniform_for_equal_slots():
    rng = np.random.default_rng(0)
    P = _attention_params(rng)
    h, c = nx.constant(rng.normal(size=(3, 5))), nx.constant(rng.normal(size=(3, 5)))
    alpha = mdl.input_attention(h, c, nx.constant(rng.normal(size=(3, 4, 5))), P).data
    np.testing.assert_allclose(alpha.sum(-1), 1.0, atol=1e-12)
    assert (alpha >= 0).all()
    equal = np.repeat(rng.normal(size=(3, 1, 5)), 4, axis=1)
    np.testing.assert_allclose(mdl.input_attention(h, c, nx.constant(equal), P).data, 0.25, atol=1e-12)


def test_raising_one_slot_score_raises_its_weight():
    rng = np.random.default_rng(1)
    P = _attention_params(rng)
    h, c = nx.constant(rng.normal(size=(1, 5))), nx.constant(rng.normal(size=(1, 5)))
    summary = rng.normal(size=(1, 4, 5))
    before = mdl.input_attention(h, c, nx.constant(summary), P).data[0, 2]
    summary[0, 2] += 0.1 * np.sign(P["enc_att_v"].data)  # each tanh term moves with the sign of v
    assert mdl.input_attention(h, c, nx.constant(summary), P).data[0, 2] > before


def test_temporal_attention_properties():
    rng = np.random.default_rng(2)
    P = _attention_params(rng)
    d, s = nx.constant(rng.normal(size=(2, 5))), nx.constant(rng.normal(size=(2, 5)))
    enc = rng.normal(size=(2, 6, 5))
    ctx, beta = mdl.temporal_attention(d, s, nx.constant(enc), nx.constant(rng.normal(size=(2, 6, 5))), P)
    np.testing.assert_allclose(beta.data.sum(-1), 1.0, atol=1e-12)
    one, _ = mdl.temporal_attention(d, s, nx.constant(enc[:, :1]), nx.constant(rng.normal(size=(2, 1, 5))), P)
    np.testing.assert_allclose(one.data, enc[:, 0], atol=1e-12)
    flat_keys = np.repeat(rng.normal(size=(2, 1, 5)), 6, axis=1)
    mean_ctx, _ = mdl.temporal_attention(d, s, nx.constant(enc), nx.constant(flat_keys), P)
    np.testing.assert_allclose(mean_ctx.data, enc.mean(axis=1), atol=1e-12)


def test_traced_attention_weights_are_simplices(qtc6_set, sym):
    cfg, params, _ = sym
    trace = mdl.attention_trace(qtc6_set.test[:3], params, cfg)
    assert len(trace.alpha) == cfg.t_history and len(trace.beta) == cfg.t_future
    for w in trace.alpha + trace.beta:
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)
        assert (w >= 0).all()


# ---------------------------------------------------------------------------
# forward, loss and prediction


def test_symbolic_forward_shape_and_softmax(sym):
    cfg, params, batch = sym
    out = mdl.forward(batch, params, cfg).data
    assert out.shape == (batch.size, cfg.n_star, cfg.t_future, cfg.dict_size)
    p = nx.softmax(nx.constant(out)).data
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


def test_metric_forward_shape(met):
    cfg, params, batch = met
    out = mdl.forward(batch, params, cfg).data
    assert out.shape == (batch.size, cfg.n_star + 1, cfg.t_future, 2)


def test_forward_is_bit_identical_across_runs(sym):
    cfg, params, batch = sym
    assert np.array_equal(mdl.forward(batch, params, cfg).data, mdl.forward(batch, params, cfg).data)


@pytest.mark.parametrize("which", ["sym", "met"])
def test_teacher_forcing_on_own_predictions_reproduces_free_running(which, request):
    cfg, params, batch = request.getfixturevalue(which)
    free = mdl.forward(batch, params, cfg, teacher=False).data
    own = np.argmax(free, axis=-1) if cfg.framework.symbolic else free
    forced = mdl.forward(replace(batch, targets=own), params, cfg, teacher=True).data
    np.testing.assert_allclose(forced, free, atol=1e-12)


def test_perfect_symbolic_predictions_have_tiny_loss(sym):
    cfg, _, batch = sym
    logits = np.full(batch.targets.shape + (cfg.dict_size,), -50.0)
    np.put_along_axis(logits, batch.targets[..., None], 50.0, axis=-1)
    assert float(mdl.loss(nx.constant(logits), batch, cfg).data) < 1e-6


def test_exact_metric_predictions_have_zero_loss(met):
    cfg, _, batch = met
    assert float(mdl.loss(nx.constant(batch.targets), batch, cfg).data) == 0.0


def test_hand_computed_symbolic_loss():
    cfg = mdl.ModelConfig("qtc4", 2, dict_size=3, t_history=2, t_future=2)
    logits = np.array([[[[0.0, 1.0, 2.0], [1.0, 1.0, 1.0]], [[3.0, 0.0, 0.0], [0.5, -0.5, 0.0]]]])
    targets = np.array([[[2, 0], [1, 2]]])
    batch = mdl.Batch(np.zeros((1, 2, 2), int), targets)
    lse = [np.log(np.exp(0) + np.exp(1) + np.exp(2)), np.log(3 * np.e), np.log(np.exp(3) + 2),
           np.log(np.exp(0.5) + np.exp(-0.5) + 1)]
    picked = [2.0, 1.0, 0.0, 0.0]
    expected = np.mean(np.array(lse) - picked)
    assert float(mdl.loss(nx.constant(logits), batch, cfg).data) == pytest.approx(expected, abs=1e-12)


def test_hand_computed_metric_loss():
    cfg = mdl.ModelConfig("ts", 1, t_history=2, t_future=2)
    pred = np.zeros((1, 2, 2, 2))
    target = np.zeros((1, 2, 2, 2))
    target[0, 0, 0] = [3.0, 4.0]  # counted
    target[0, 1, 1] = [100.0, 100.0]  # masked out
    mask = np.array([[[True, True], [True, False]]])
    batch = mdl.Batch(np.zeros((1, 2, 2, 2)), target, mask, np.zeros((1, 2)))
    # 25 squared error over 3 masked-in steps of 2 coordinates
    assert float(mdl.loss(nx.constant(pred), batch, cfg).data) == pytest.approx(np.sqrt(25 / 6), abs=1e-12)


@pytest.mark.parametrize("name", ["qtc6_set", "ts_set"])
def test_loss_is_invariant_to_sample_order(name, request):
    ds = request.getfixturevalue(name)
    cfg = small(ds)
    params = mdl.init_params(cfg)
    s = ds.train[:4]
    a = float(mdl.batch_loss(s, params, cfg).data)
    b = float(mdl.batch_loss(s[::-1], params, cfg).data)
    assert a == pytest.approx(b, rel=1e-12)


def test_symbolic_predictions_are_valid_indices(qtc6_set, sym):
    cfg, params, _ = sym
    pred = mdl.predict_all(qtc6_set.test, params, cfg)
    assert pred.shape == (len(qtc6_set.test), cfg.n_star, cfg.t_future)
    assert pred.min() >= 0 and pred.max() < cfg.dict_size


def test_metric_predictions_are_world_coordinates(ts_set, met):
    cfg, params, _ = met
    pred = mdl.predict(ts_set.test[:3], params, cfg)
    assert pred.shape == (3, cfg.n_star + 1, cfg.t_future, 2) and np.isfinite(pred).all()


def test_untrained_metric_model_extrapolates_at_constant_velocity(ts_set):
    from masi.evalharness import persistence_baseline

    cfg = small(ts_set)
    params = mdl.init_params(cfg)
    assert not params["head_w"].any() and not params["head_b"].any()
    pred = mdl.predict(ts_set.test, params, cfg)
    Th = cfg.t_history
    for b, s in enumerate(ts_set.test):
        base = persistence_baseline(s, "ts")
        moving = np.concatenate([[True], s.present[:, Th - 2:Th].all(axis=1)])
        np.testing.assert_allclose(pred[b][moving], base[moving], atol=1e-9)


def test_metric_loss_counts_present_members_outside_the_radius(ts_set):
    s = next(x for x in ts_set.train if (x.present & ~x.mask)[:, x.t_history:].any())
    batch = mdl.make_batch([s], small(ts_set))
    np.testing.assert_array_equal(batch.mask[0, 1:], s.present[:, s.t_history:])


def test_zero_weights_give_constant_symbolic_predictions(qtc6_set, sym):
    cfg, params, _ = sym
    pred = mdl.predict(qtc6_set.test[:3], {k: np.zeros_like(v) for k, v in params.items()}, cfg)
    assert (pred == pred[..., :1]).all()


def test_batch_shape_mismatch(qtc6_set, qtc4_set, ts_set, sym):
    cfg, _, _ = sym
    with pytest.raises(CompatibilityError):
        mdl.make_batch(ts_set.train[:2], mdl.with_overrides(cfg, n_star=ts_set.n_star, t_history=ts_set.config.t_history))
    with pytest.raises(UsageError):
        mdl.make_batch([], cfg)
    with pytest.raises(CompatibilityError):
        mdl.make_batch(qtc6_set.train[:2], mdl.with_overrides(cfg, t_future=cfg.t_future + 1))


# ---------------------------------------------------------------------------
# training


def test_fit_records_history_and_is_deterministic(qtc4_set):
    cfg = small(qtc4_set, epochs=4)
    a = mdl.fit(qtc4_set, cfg)
    b = mdl.fit(qtc4_set, cfg)
    assert [h[0] for h in a.history] == [1, 2, 3, 4]
    assert a.history == b.history
    assert all(np.isfinite(h[1]) and np.isfinite(h[2]) for h in a.history)
    assert a.best_epoch == 1 + int(np.argmin([h[2] for h in a.history]))


def test_fit_reduces_training_loss(ts_set):
    res = mdl.fit(ts_set, small(ts_set, epochs=6, lr=1e-2))
    assert res.history[-1][1] < res.history[0][1]


def test_fit_rejects_mismatches(qtc4_set, ts_set):
    with pytest.raises(CompatibilityError):
        mdl.fit(qtc4_set, small(ts_set))
    empty = DatasetSplits(qtc4_set.framework, qtc4_set.config, qtc4_set.n_star, 15.0, qtc4_set.dictionaries,
                          [], [], [])
    with pytest.raises(UsageError):
        mdl.fit(empty, small(qtc4_set))


def test_checkpoint_restores_the_model(qtc4_set):
    cfg = small(qtc4_set, epochs=1)
    res = mdl.fit(qtc4_set, cfg)
    ck = res.checkpoint(cfg, qtc4_set.digests)
    cfg2, params = mdl.model_from_checkpoint(ck)
    assert cfg2 == cfg
    np.testing.assert_array_equal(mdl.predict(qtc4_set.test, params, cfg2), mdl.predict(qtc4_set.test, res.params, cfg))
    broken = res.checkpoint(cfg)
    broken.params = dict(broken.params, head_b=np.zeros(3))
    with pytest.raises(CompatibilityError):
        mdl.model_from_checkpoint(broken)


@pytest.mark.parametrize("framework", ["qtc4", "ts"])
def test_full_model_gradients(framework):
    report = mdl.gradient_check_model(framework, max_entries=8)
    assert report.passed, list(report.lines())
    assert all(report.checked.values())
    assert report.max_error > 0
