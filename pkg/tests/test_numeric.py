import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from core.config import ActivityProfile, ModelConfig
from core.errors import EmptyInputError, ShapeError, StateError
from models.params import ParameterBlock, ParameterSet
from services.dml_service import dml_forward, init_siamese, siamese_features, zero_siamese
from services.numeric_service import (
    Evaluation,
    GradientTape,
    backward,
    bce_loss,
    dense_forward,
    gradient_check,
    lstm_cell_forward,
    lstm_sequence_forward,
    mse_loss,
)
from services.score_service import head_forward, init_head, score_forward


def test_dense_identity_matches_matmul():
    W = ParameterBlock(name="W", values=[[1.0, 2.0], [3.0, 4.0]])
    b = ParameterBlock(name="b", values=[0.5, -0.5])
    y = dense_forward(W, b, np.array([1.0, 1.0]))
    np.testing.assert_allclose(y, [3.5, 6.5])


def test_dense_rejects_wrong_input_width():
    W = ParameterBlock(name="W", values=np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        dense_forward(W, None, np.zeros(4))


def test_lstm_cell_with_zero_weights():
    # every gate is sigmoid(0) = 0.5 and g = tanh(0) = 0
    params = ParameterSet()
    params.add(ParameterBlock(name="lstm.W_x", values=np.zeros((8, 3))))
    params.add(ParameterBlock(name="lstm.W_h", values=np.zeros((8, 2))))
    params.add(ParameterBlock(name="lstm.b", values=np.zeros(8)))
    h, c = lstm_cell_forward(params, np.ones(3), np.zeros(2), np.ones(2))
    np.testing.assert_allclose(c, [0.5, 0.5])
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5) * np.ones(2))


def test_lstm_cell_state_length_checked(tiny_params):
    with pytest.raises(ShapeError):
        lstm_cell_forward(tiny_params, np.zeros(4), np.zeros(2), np.zeros(3))


def test_empty_sequence_rejected(tiny_params):
    with pytest.raises(EmptyInputError):
        lstm_sequence_forward(tiny_params, np.zeros((1, 0, 4)))


def test_zero_parameters_give_half_probability():
    params = zero_siamese(ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4))
    rng = np.random.default_rng(0)
    p = dml_forward(params, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    assert p == pytest.approx(0.5, abs=1e-15)


def test_mismatched_pair_lengths_rejected(tiny_params):
    with pytest.raises(ShapeError):
        dml_forward(tiny_params, np.zeros((3, 4)), np.zeros((2, 4)))


def test_batched_forward_matches_single(tiny_params):
    rng = np.random.default_rng(1)
    xp, xq = rng.normal(size=(5, 3, 4)), rng.normal(size=(5, 3, 4))
    batch = dml_forward(tiny_params, xp, xq)
    single = [dml_forward(tiny_params, xp[i], xq[i]) for i in range(5)]
    np.testing.assert_allclose(batch, single, rtol=1e-12)


def test_backward_without_forward():
    tape = GradientTape(ParameterSet())
    with pytest.raises(StateError):
        backward(tape, 1.0)


@given(st.floats(min_value=0.01, max_value=0.99), st.integers(min_value=0, max_value=1))
def test_bce_gradient_sign(p, label):
    loss, grad = bce_loss(np.array([p]), label)
    assert loss > 0
    assert (grad[0] < 0) == (label == 1)


def test_bce_clamps_extreme_probabilities():
    loss, grad = bce_loss(np.array([0.0, 1.0]), np.array([1, 0]))
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))


def test_mse_loss_value_and_gradient():
    loss, grad = mse_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
    assert loss == pytest.approx(2.5)
    np.testing.assert_allclose(grad, [1.0, 2.0])


def test_linear_gradient_check():
    params = ParameterSet()
    params.add(ParameterBlock(name="W", values=[[0.3, -0.2, 0.1]]))
    params.add(ParameterBlock(name="b", values=[0.05]))
    x = np.array([[1.0, 2.0, -1.0], [0.5, -0.5, 0.25]])
    y = np.array([0.4, -0.1])
    tape = GradientTape(params)

    def closure():
        tape.clear()
        out = dense_forward(params.blocks["W"], params.blocks["b"], x, "identity", tape)
        loss, grad = mse_loss(out[:, 0], y)
        return Evaluation(loss, backward(tape, grad[:, None]))

    assert gradient_check(closure, params) < 1e-8


def _siamese_closure(params, xp, xq, y):
    tape = GradientTape(params)

    def closure():
        tape.clear()
        p = dml_forward(params, xp, xq, tape)
        loss, grad = bce_loss(p, y)
        return Evaluation(loss, backward(tape, grad), tape.relu_signature())

    return closure


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("activation", ["relu", "identity"])
def test_siamese_bce_gradients(seed, activation):
    config = ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4, activation=activation)
    params = init_siamese(config, seed=seed)
    rng = np.random.default_rng(seed)
    xp, xq = rng.normal(size=(4, 3, 4)), rng.normal(size=(4, 3, 4))
    y = np.array([1.0, 0.0, 1.0, 0.0])
    assert gradient_check(_siamese_closure(params, xp, xq, y), params, seed=seed) < 1e-6


def test_siamese_gradients_without_bias():
    config = ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4, use_bias=False)
    params = init_siamese(config, seed=11)
    rng = np.random.default_rng(11)
    xp, xq = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    assert gradient_check(_siamese_closure(params, xp, xq, np.array([1.0, 0.0])), params) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_frozen_siamese_mse_gradients(tiny_model, seed):
    head = init_head(init_siamese(tiny_model, seed=seed), ActivityProfile())
    rng = np.random.default_rng(seed)
    head.siamese.blocks["head.W"].values[...] = rng.normal(size=(1, 4))
    xe, xq = rng.normal(size=(6, 3, 4)), rng.normal(size=(6, 3, 4))
    target = rng.uniform(size=6)
    tape = GradientTape(head.siamese)

    def closure():
        tape.clear()
        z = siamese_features(head.siamese, xe, xq)
        loss, grad = mse_loss(head_forward(head, z, tape), target)
        return Evaluation(loss, backward(tape, grad[:, None]))

    assert {b.name for b in head.siamese.trainable()} == {"head.W", "head.b"}
    assert gradient_check(closure, head.siamese) < 1e-6


def test_frozen_blocks_get_no_gradient(tiny_params):
    head = init_head(tiny_params, ActivityProfile())
    tape = GradientTape(head.siamese)
    rng = np.random.default_rng(2)
    score_forward(head, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), tape)
    grads = backward(tape, np.array([1.0]), output="S")
    assert set(grads) == {"head.W", "head.b"}


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def _cell_by_hand(Wx, Wh, b, x, h_prev, c_prev):
    M = Wh.shape[1]

    def pre(row):
        total = b[row]
        for k in range(len(x)):
            total += Wx[row, k] * x[k]
        for k in range(M):
            total += Wh[row, k] * h_prev[k]
        return total

    h, c = [], []
    for u in range(M):
        i = _sigmoid(pre(u))
        f = _sigmoid(pre(M + u))
        o = _sigmoid(pre(2 * M + u))
        g = math.tanh(pre(3 * M + u))
        c_u = f * c_prev[u] + i * g
        c.append(c_u)
        h.append(o * math.tanh(c_u))
    return np.array(h), np.array(c)


def _lstm_params(rng, D, M, scale=0.5):
    params = ParameterSet()
    params.add(ParameterBlock(name="lstm.W_x", values=rng.normal(scale=scale, size=(4 * M, D))))
    params.add(ParameterBlock(name="lstm.W_h", values=rng.normal(scale=scale, size=(4 * M, M))))
    params.add(ParameterBlock(name="lstm.b", values=rng.normal(scale=scale, size=4 * M)))
    return params


@pytest.mark.parametrize("seed", range(5))
def test_lstm_cell_matches_scalar_arithmetic(seed):
    rng = np.random.default_rng(seed)
    params = _lstm_params(rng, D=4, M=3)
    x, h_prev, c_prev = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
    h, c = lstm_cell_forward(params, x, h_prev, c_prev)
    h_ref, c_ref = _cell_by_hand(params["lstm.W_x"], params["lstm.W_h"], params["lstm.b"], x, h_prev, c_prev)
    np.testing.assert_allclose(h, h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(c, c_ref, rtol=0, atol=1e-12)


def test_lstm_single_unit_with_biases():
    # gate rows in i, f, o, g order
    params = ParameterSet()
    params.add(ParameterBlock(name="lstm.W_x", values=[[0.5], [-0.3], [0.8], [1.2]]))
    params.add(ParameterBlock(name="lstm.W_h", values=[[0.1], [0.2], [-0.4], [0.3]]))
    params.add(ParameterBlock(name="lstm.b", values=[0.1, 1.0, -0.2, 0.05]))
    h, c = lstm_cell_forward(params, np.array([2.0]), np.array([0.5]), np.array([-1.0]))
    # pre-activations: i 1.15, f 0.5, o 1.2, g 2.6
    i, f, o, g = _sigmoid(1.15), _sigmoid(0.5), _sigmoid(1.2), math.tanh(2.6)
    expected_c = f * -1.0 + i * g
    assert c[0] == pytest.approx(expected_c, abs=1e-12)
    assert h[0] == pytest.approx(o * math.tanh(expected_c), abs=1e-12)
    assert c[0] == pytest.approx(0.1287, abs=1e-4)


def test_lstm_prefix_matches_cached_states():
    rng = np.random.default_rng(5)
    params = _lstm_params(rng, D=4, M=3)
    X = rng.normal(size=(2, 6, 4))
    tape = GradientTape(params)
    lstm_sequence_forward(params, X, tape)
    cached = tape.ops[-1].cache["h"]
    for j in range(1, 7):
        np.testing.assert_array_equal(lstm_sequence_forward(params, X[:, :j]), cached[j - 1])


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=2**31))
def test_zero_lstm_embeds_everything_at_origin(n, seed):
    params = zero_siamese(ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4))
    X = np.random.default_rng(seed).normal(scale=10.0, size=(n, 4))
    np.testing.assert_array_equal(lstm_sequence_forward(params, X), np.zeros(3))


def test_dense_relu_matches_loops():
    rng = np.random.default_rng(8)
    W = ParameterBlock(name="W", values=rng.normal(size=(5, 3)))
    b = ParameterBlock(name="b", values=rng.normal(size=5))
    x = rng.normal(size=(4, 3))
    y = dense_forward(W, b, x, "relu")
    for r in range(4):
        for u in range(5):
            z = b.values[u] + sum(W.values[u, k] * x[r, k] for k in range(3))
            assert y[r, u] == pytest.approx(max(z, 0.0), abs=1e-12)
    assert np.any(y == 0.0) and np.any(y > 0.0)
