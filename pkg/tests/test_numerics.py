import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from masi import numerics as nx
from masi.errors import NumericError, UsageError


def grads_of(fn, **values):
    g = nx.Graph()
    ts = {k: g.param(k, v) for k, v in values.items()}
    loss = fn(**ts)
    return nx.backward(g, loss), g


# ---------------------------------------------------------------------------
# reverse accumulation


def test_square_gradient():
    grads, _ = grads_of(lambda x: x * x, x=np.array(3.0))
    assert grads["x"] == pytest.approx(6.0)


def test_product_plus_term_gradient():
    grads, _ = grads_of(lambda x, y: x * y + x, x=np.array(2.0), y=np.array(5.0))
    assert (grads["x"], grads["y"]) == (pytest.approx(6.0), pytest.approx(2.0))


def test_unused_parameter_gets_zero_gradient():
    grads, _ = grads_of(lambda x, y: x * 2.0, x=np.array(1.0), y=np.ones((2, 3)))
    np.testing.assert_array_equal(grads["y"], np.zeros((2, 3)))


def test_non_scalar_loss_is_rejected():
    g = nx.Graph()
    x = g.param("x", np.ones(3))
    with pytest.raises(UsageError):
        nx.backward(g, x * 2.0)


def test_duplicate_parameter_name_rejected():
    g = nx.Graph()
    g.param("w", np.ones(2))
    with pytest.raises(UsageError):
        g.param("w", np.ones(2))


def test_backward_visits_each_node_once():
    g = nx.Graph()
    w = g.param("w", np.ones((3, 3)))
    x = g.constant(np.arange(3.0))
    loss = nx.tsum(nx.tanh(x @ w) * (x @ w))
    n_nodes = len(g.nodes)
    nx.backward(g, loss)
    assert g.backward_evals == n_nodes
    assert len(g.nodes) == n_nodes  # the sweep adds no nodes


def test_non_finite_values_raise():
    g = nx.Graph()
    x = g.param("x", np.array([0.0, 1.0]))
    with pytest.raises(NumericError):
        nx.log(x)


def test_constant_only_ops_are_not_recorded():
    g = nx.Graph()
    g.param("w", np.ones(2))
    out = nx.constant(np.ones(2)) * 3.0
    assert not out.requires_grad and len(g.nodes) == 0


def test_broadcast_gradients_are_reduced():
    grads, _ = grads_of(lambda a, b: nx.tsum((a + b) * (a + b)), a=np.ones((4, 3)), b=np.arange(3.0))
    np.testing.assert_allclose(grads["b"], 2 * (1 + np.arange(3.0)) * 4)


def test_random_three_layer_composition_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = {"w1": rng.normal(size=(5, 7)), "w2": rng.normal(size=(7, 6)), "w3": rng.normal(size=(6, 4)),
              "b": rng.normal(size=7)}
    x = rng.normal(size=(3, 5))
    targets = np.array([0, 3, 1])

    def closure(p):
        g = nx.Graph()
        t = {k: g.param(k, v) for k, v in p.items()}
        h = nx.tanh(nx.constant(x) @ t["w1"] + t["b"])
        h = nx.sigmoid(h @ t["w2"]) * nx.exp(nx.constant(-0.1) * h @ t["w2"])
        return nx.cross_entropy(nx.softmax(h @ t["w3"]) * 3.0, targets)

    report = nx.gradient_check(closure, params, max_entries=None)
    assert report.passed, list(report.lines())


# ---------------------------------------------------------------------------
# elementwise and structural ops


def test_op_values():
    a = nx.constant([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose((a @ a).data, [[7, 10], [15, 22]])
    np.testing.assert_allclose(nx.transpose(a).data, [[1, 3], [2, 4]])
    np.testing.assert_allclose(nx.concat([a, a], axis=0).shape, (4, 2))
    np.testing.assert_allclose(nx.stack([a, a], axis=1).data[:, 0], a.data)
    np.testing.assert_allclose(nx.take(a, np.array([1, 1])).data, [[3, 4], [3, 4]])
    np.testing.assert_allclose(nx.sigmoid(nx.constant(0.0)).data, 0.5)
    np.testing.assert_allclose(nx.mean(a, axis=0).data, [2, 3])


def test_structural_op_gradients():
    rng = np.random.default_rng(1)
    params = {"a": rng.normal(size=(3, 4)), "t": rng.normal(size=(5, 4))}
    idx = np.array([0, 2, 2, 4])

    def closure(p):
        g = nx.Graph()
        a, t = g.param("a", p["a"]), g.param("t", p["t"])
        rows = nx.take(t, idx)  # (4, 4)
        s = nx.stack([a[0], a[1:3].sum(axis=0)], axis=0)  # (2, 4)
        c = nx.concat([s, nx.reshape(rows, (4, 4))[:2]], axis=0)  # (4, 4)
        return nx.mean(nx.square(nx.transpose(c) @ a[2:3].transpose(1, 0)) + nx.sqrt(nx.square(c) + 1.0).sum())

    report = nx.gradient_check(closure, params, max_entries=None)
    assert report.passed, list(report.lines())


# ---------------------------------------------------------------------------
# softmax and cross-entropy


def test_uniform_logits_give_log_k():
    for k in (2, 7, 82):
        assert float(nx.cross_entropy(nx.constant(np.zeros((3, k))), np.zeros(3, int)).data) == pytest.approx(np.log(k))


def test_confident_correct_logit_gives_tiny_loss():
    logits = np.zeros((2, 5))
    logits[[0, 1], [3, 1]] = 1000.0
    assert float(nx.cross_entropy(nx.constant(logits), np.array([3, 1])).data) < 1e-6


def test_cross_entropy_gradient_is_softmax_minus_one_hot():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(1, 6))
    grads, _ = grads_of(lambda z: nx.cross_entropy(z, np.array([4])), z=z)
    p = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(grads["z"], p - np.eye(6)[[4]], atol=1e-12)

    def closure(prm):
        return nx.cross_entropy(nx.Graph().param("z", prm["z"]), np.array([4]))

    assert nx.gradient_check(closure, {"z": z.copy()}).passed


def test_cross_entropy_rejects_bad_targets():
    with pytest.raises(UsageError):
        nx.cross_entropy(nx.constant(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(UsageError):
        nx.cross_entropy(nx.constant(np.zeros((2, 3))), np.array([0]))


logit_rows = arrays(np.float64, (3, 5), elements=st.floats(-50, 50))


@settings(max_examples=100)
@given(logit_rows, st.floats(-100, 100))
def test_softmax_sums_to_one_and_ignores_shifts(v, shift):
    y = nx.softmax(nx.constant(v)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(nx.softmax(nx.constant(v + shift)).data, y, atol=1e-12)


# ---------------------------------------------------------------------------
# LSTM cell


def test_zero_lstm_gives_zero_state():
    h, c = nx.lstm_cell(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)), np.zeros((7, 16)), np.zeros(16))
    assert not h.data.any() and not c.data.any()


def test_saturated_gates_keep_the_cell():
    hd = 4
    bias = np.zeros(4 * hd)
    bias[:hd] = -50.0  # input gate closed
    bias[hd:2 * hd] = 50.0  # forget gate open
    rng = np.random.default_rng(0)
    c = rng.normal(size=(2, hd))
    _, c2 = nx.lstm_cell(rng.normal(size=(2, 3)), rng.normal(size=(2, hd)), c, np.zeros((3 + hd, 4 * hd)), bias)
    np.testing.assert_allclose(c2.data, c, atol=1e-10)


def test_lstm_cell_matches_reference_formula():
    rng = np.random.default_rng(4)
    x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    w, b = rng.normal(size=(8, 20)), rng.normal(size=20)
    z = np.concatenate([x, h], -1) @ w + b
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, o, gg = sig(z[:, :5]), sig(z[:, 5:10]), sig(z[:, 10:15]), np.tanh(z[:, 15:])
    c_ref = f * c + i * gg
    h2, c2 = nx.lstm_cell(x, h, c, w, b)
    np.testing.assert_allclose(c2.data, c_ref, atol=1e-12)
    np.testing.assert_allclose(h2.data, o * np.tanh(c_ref), atol=1e-12)


def test_lstm_cell_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    params = {"x": rng.normal(size=(2, 3)), "h": rng.normal(size=(2, 4)), "c": rng.normal(size=(2, 4)),
              "w": rng.normal(size=(7, 16)) * 0.5, "b": rng.normal(size=16) * 0.5}

    def closure(p):
        g = nx.Graph()
        t = {k: g.param(k, v) for k, v in p.items()}
        h2, c2 = nx.lstm_cell(t["x"], t["h"], t["c"], t["w"], t["b"])
        h3, c3 = nx.lstm_cell(t["x"], h2, c2, t["w"], t["b"])
        return nx.tsum(h3 * h3) + nx.tsum(c3)

    report = nx.gradient_check(closure, params, step=1e-5, max_entries=None)
    assert report.passed, list(report.lines())


def test_lstm_shape_mismatch_raises():
    with pytest.raises(UsageError):
        nx.lstm_cell(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((6, 16)), np.zeros(16))
    with pytest.raises(UsageError):
        nx.lstm_cell(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 5)), np.zeros((7, 16)), np.zeros(16))


# ---------------------------------------------------------------------------
# Adam and clipping


def test_first_adam_step_moves_by_lr_times_sign():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    nx.adam_step(p, {"w": np.array([0.3, -7.0, 1e-3])}, nx.AdamState(), 0.01)
    np.testing.assert_allclose(p["w"], [0.99, -1.99, 0.49], atol=1e-7)


def test_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, 2.0])}
    state = nx.AdamState()
    nx.adam_step(p, {"w": np.zeros(2)}, state, 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, 2.0])
    assert state.step == 1 and state.m["w"].shape == (2,)


def test_adam_converges_on_a_parabola():
    p = {"x": np.array(0.0)}
    state = nx.AdamState()
    for _ in range(200):
        nx.adam_step(p, {"x": 2 * (p["x"] - 3.0)}, state, 0.1)
    assert abs(float(p["x"]) - 3.0) < 0.05
    assert state.step == 200


def test_adam_shape_mismatch_raises():
    with pytest.raises(UsageError):
        nx.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nx.AdamState(), 0.1)


def test_global_norm_clip():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = nx.clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    assert nx.clip_global_norm(grads, None)[0] is grads


# ---------------------------------------------------------------------------
# gradient checking


def test_linear_model_gradient_is_exact():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 3))

    def closure(p):
        g = nx.Graph()
        return nx.tsum(nx.constant(x) @ g.param("w", p["w"]) + g.param("b", p["b"]))

    report = nx.gradient_check(closure, {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}, max_entries=None)
    assert report.max_error < 1e-8


def test_corrupted_gradient_rule_is_flagged():
    def bad_square(x):
        return nx.apply_op("bad_square", x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2

    def closure(p):
        g = nx.Graph()
        good = g.param("good", p["good"])
        bad = g.param("bad", p["bad"])
        return nx.tsum(good * good) + nx.tsum(bad_square(bad))

    report = nx.gradient_check(closure, {"good": np.array([1.0, 2.0]), "bad": np.array([1.5, -0.5])})
    assert report.failed == ["bad"]
    assert not report.passed
    assert any("FAIL" in line for line in report.lines())


def test_gradient_check_samples_large_blocks():
    def closure(p):
        g = nx.Graph()
        w = g.param("w", p["w"])
        return nx.tsum(w * w)

    report = nx.gradient_check(closure, {"w": np.ones(100)}, max_entries=10)
    assert report.checked["w"] in (10, 11) and report.passed


def test_matmul_with_vector_operands_matches_finite_differences():
    rng = np.random.default_rng(7)

    def closure(p):
        g = nx.Graph()
        v, m, u = g.param("v", p["v"]), g.param("m", p["m"]), g.param("u", p["u"])
        return nx.tsum(nx.tanh(v @ m) @ u) + nx.tsum(nx.square(m @ u))

    report = nx.gradient_check(closure, {"v": rng.normal(size=3), "m": rng.normal(size=(3, 4)),
                                         "u": rng.normal(size=4)}, max_entries=None)
    assert report.passed, list(report.lines())
