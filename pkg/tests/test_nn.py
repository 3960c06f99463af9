import numpy as np
import pytest

from causal_routing import nn
from causal_routing import tape as T
from causal_routing.errors import DimensionError

from oracles import finite_difference_gradients, max_relative_error, ref_attention


def identity_attention(d):
    return nn.AttentionParams(
        wq=T.Parameter("wq", np.eye(d)),
        wk=T.Parameter("wk", np.eye(d)),
        wv=T.Parameter("wv", np.eye(d)),
    )


def test_attention_single_key_row_passes_value_through():
    rng = np.random.default_rng(0)
    p = nn.init_attention(rng, "a", 4, 4, 6)
    x = rng.standard_normal((1, 4))
    tp = T.Tape()
    out = nn.attention(tp.tensor(x), tp.tensor(x), tp.tensor(x), p)
    assert np.array_equal(out.data, x @ p.wv.value)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(1)
    p = identity_attention(3)
    keys = np.tile(rng.standard_normal(3), (5, 1))
    values = rng.standard_normal((5, 3))
    queries = rng.standard_normal((2, 3))
    tp = T.Tape()
    out = nn.attention(tp.tensor(queries), tp.tensor(keys), tp.tensor(values), p)
    expected = np.tile(values.mean(axis=0), (2, 1))
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_hand_case_matches_reference():
    p = identity_attention(2)
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    tp = T.Tape()
    out = nn.attention(tp.tensor(x), tp.tensor(x), tp.tensor(x), p)
    expected = ref_attention(x, x, x, np.eye(2), np.eye(2), np.eye(2))
    assert np.max(np.abs(out.data - expected)) < 1e-10


def test_attention_rows_are_convex_combinations():
    rng = np.random.default_rng(2)
    p = identity_attention(4)
    values = rng.random((6, 4)) + 0.5
    queries = rng.standard_normal((3, 4))
    keys = rng.standard_normal((6, 4))
    tp = T.Tape()
    out = nn.attention(tp.tensor(queries), tp.tensor(keys), tp.tensor(values), p).data
    assert np.all(out <= values.max(axis=0) + 1e-12)
    assert np.all(out >= values.min(axis=0) - 1e-12)


def test_attention_key_value_permutation_invariance():
    rng = np.random.default_rng(3)
    p = nn.init_attention(rng, "a", 4, 4, 5)
    q = rng.standard_normal((3, 4))
    kv = rng.standard_normal((6, 4))
    perm = rng.permutation(6)
    tp = T.Tape()
    out1 = nn.attention(tp.tensor(q), tp.tensor(kv), tp.tensor(kv), p).data
    tp2 = T.Tape()
    out2 = nn.attention(
        tp2.tensor(q), tp2.tensor(kv[perm]), tp2.tensor(kv[perm]), p
    ).data
    assert np.allclose(out1, out2, atol=1e-12)


def test_attention_batched_matches_per_example():
    rng = np.random.default_rng(4)
    p = nn.init_attention(rng, "a", 4, 4, 5)
    x = rng.standard_normal((3, 6, 4))
    tp = T.Tape()
    batched = nn.attention(tp.tensor(x), tp.tensor(x), tp.tensor(x), p).data
    for i in range(3):
        tpi = T.Tape()
        single = nn.attention(
            tpi.tensor(x[i]), tpi.tensor(x[i]), tpi.tensor(x[i]), p
        ).data
        assert np.allclose(batched[i], single, atol=1e-13)


def test_attention_gradients():
    rng = np.random.default_rng(5)
    p = nn.init_attention(rng, "a", 3, 3, 4)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((4, 4))

    def build(tp):
        xt = tp.tensor(x)
        out = nn.attention(xt, xt, xt, p)
        return T.sum_all(T.multiply(out, tp.constant(w)))

    def loss_value():
        tp = T.Tape()
        return float(build(tp).data)

    tp = T.Tape()
    loss = build(tp)
    params = p.parameters()
    for q in params:
        q.zero_grad()
    tp.backward(loss)
    fd = finite_difference_gradients(loss_value, params)
    for q in params:
        assert max_relative_error(q.grad, fd[q.name]) < 1e-6


# ------------------------------------------------------------------------ MLP


def test_mlp_zero_weights_give_bias():
    p = nn.MlpParams(
        weights=[T.Parameter("w0", np.zeros((3, 2)))],
        biases=[T.Parameter("b0", np.array([1.5, -2.0]))],
    )
    tp = T.Tape()
    out = nn.mlp_forward(tp.tensor(np.ones((4, 3))), p)
    assert np.array_equal(out.data, np.tile([1.5, -2.0], (4, 1)))


def test_mlp_single_layer_is_affine():
    rng = np.random.default_rng(6)
    w = rng.standard_normal((3, 2))
    b = rng.standard_normal(2)
    p = nn.MlpParams(weights=[T.Parameter("w0", w)], biases=[T.Parameter("b0", b)])
    x = rng.standard_normal((5, 3))
    tp = T.Tape()
    out = nn.mlp_forward(tp.tensor(x), p)
    assert np.array_equal(out.data, x @ w + b)


def test_mlp_gradients():
    rng = np.random.default_rng(7)
    p = nn.init_mlp(rng, "m", [3, 5, 2])
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((4, 2))

    def build(tp):
        out = nn.mlp_forward(tp.tensor(x), p)
        return T.sum_all(T.multiply(out, tp.constant(w)))

    def loss_value():
        tp = T.Tape()
        return float(build(tp).data)

    tp = T.Tape()
    loss = build(tp)
    params = p.parameters()
    for q in params:
        q.zero_grad()
    tp.backward(loss)
    fd = finite_difference_gradients(loss_value, params)
    for q in params:
        assert max_relative_error(q.grad, fd[q.name]) < 1e-6


def test_init_mlp_needs_two_widths():
    with pytest.raises(DimensionError):
        nn.init_mlp(np.random.default_rng(0), "m", [4])


# ----------------------------------------------------------------------- Adam


def test_adam_zero_gradient_keeps_parameters():
    p = T.Parameter("p", np.array([1.0, -2.0, 3.0]))
    before = p.value.copy()
    state = nn.AdamState()
    nn.adam_step([p], state, lr=0.1)
    assert np.array_equal(p.value, before)


def test_adam_first_step_moves_by_signed_lr():
    p = T.Parameter("p", np.zeros(4))
    p.grad[...] = np.array([0.3, -0.7, 2.0, -0.01])
    state = nn.AdamState()
    nn.adam_step([p], state, lr=1e-3)
    expected = -1e-3 * np.sign(p.grad)
    assert np.allclose(p.value, expected, rtol=1e-3)


def test_adam_converges_on_quadratic_bowl():
    p = T.Parameter("p", np.array([5.0, -3.0]))
    state = nn.AdamState()
    for _ in range(2000):
        p.grad[...] = p.value
        nn.adam_step([p], state, lr=1e-2)
    assert np.max(np.abs(p.value)) < 1e-3


def test_adam_update_is_sign_symmetric():
    rng = np.random.default_rng(8)
    v0 = rng.standard_normal(6)
    g = rng.standard_normal(6)
    p1 = T.Parameter("p", v0.copy())
    p2 = T.Parameter("p", v0.copy())
    s1, s2 = nn.AdamState(), nn.AdamState()
    p1.grad[...] = g
    p2.grad[...] = -g
    nn.adam_step([p1], s1, lr=1e-2)
    nn.adam_step([p2], s2, lr=1e-2)
    assert np.array_equal(s1.v["p"], s2.v["p"])
    assert np.array_equal(s1.m["p"], -s2.m["p"])
    assert np.array_equal(p1.value - v0, -(p2.value - v0))


def test_adam_skips_frozen_parameters():
    p = T.Parameter("p", np.ones(3), trainable=False)
    p.grad[...] = 1.0
    nn.adam_step([p], nn.AdamState(), lr=0.1)
    assert np.array_equal(p.value, np.ones(3))


# ----------------------------------------------------------------------- init


def test_equal_weight_param_is_exact_third():
    p = nn.equal_weight_param("w", 3)
    assert np.array_equal(p.value, np.full(3, 1.0 / 3.0))


def test_glorot_bounds_and_variance():
    rng = np.random.default_rng(9)
    fan_in = fan_out = 100
    w = nn.glorot_uniform(rng, fan_in, fan_out)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    assert np.all(np.abs(w) <= limit)
    expected_var = limit**2 / 3.0
    assert abs(w.var() - expected_var) / expected_var < 0.1


def test_init_attention_deterministic():
    p1 = nn.init_attention(np.random.default_rng(42), "a", 4, 5, 6)
    p2 = nn.init_attention(np.random.default_rng(42), "a", 4, 5, 6)
    for a, b in zip(p1.parameters(), p2.parameters()):
        assert np.array_equal(a.value, b.value)
    assert p1.wq.value.shape == (4, 6)
    assert p1.wk.value.shape == (5, 6)
    assert p1.wv.value.shape == (5, 6)
