import struct

import numpy as np
import pytest

from causal_routing import model as M
from causal_routing import nn
from causal_routing import tape as T
from causal_routing.blocks import GlobalDictionary
from causal_routing.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    StateError,
)

from oracles import finite_difference_gradients, max_relative_error, ref_sharpening


HYPER = M.ModelHyper(
    input_width=3, width=4, block_width=4, hidden_width=5, n_layers=2, n_classes=3
)


def small_inputs(seed=0, batch=2):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, 4, 3))
    z = rng.standard_normal((batch, 2, 3))
    dictionary = GlobalDictionary(centroids=rng.standard_normal((5, 3)))
    return x, z, dictionary


# -------------------------------------------------------------------- variant


def test_variant_parse_round_trip():
    for text in ("full", "no_sharpen", "one_block:1", "two_blocks:0,2"):
        assert str(M.Variant.parse(text)) == text


def test_variant_parse_sorts_indices():
    assert M.Variant.parse("two_blocks:2,0").blocks == (0, 2)


def test_variant_parse_rejects_bad_input():
    for text in ("bogus", "one_block:3", "one_block:a", "two_blocks:1,1", "one_block:0,1"):
        with pytest.raises(ConfigError):
            M.Variant.parse(text)


def test_variant_sharpen_flag():
    assert M.Variant.parse("full").sharpen
    assert not M.Variant.parse("no_sharpen").sharpen
    assert M.Variant.parse("one_block:2").sharpen


# ------------------------------------------------------------------ sharpening


def sharpen(w, tau):
    tp = T.Tape()
    return M.sharpening_softmax(tp.tensor(np.asarray(w, dtype=np.float64)), tau).data


def test_sharpening_hand_case():
    # weights whose plain softmax is (0.7, 0.2, 0.1), pushed through tau = 0.1:
    # mass ratios become 0.7^10 : 0.2^10 : 0.1^10
    w = np.log([0.7, 0.2, 0.1])
    out = sharpen(w, 0.1)
    expected = np.array([0.9999963714, 3.6251e-06, 3.5401e-09])
    assert abs(out[0] - expected[0]) < 1e-6
    assert np.allclose(out, expected, rtol=1e-4)


def test_sharpening_tau_one_is_plain_softmax():
    rng = np.random.default_rng(0)
    for _ in range(5):
        w = rng.standard_normal(4)
        plain = np.exp(w - w.max())
        plain /= plain.sum()
        assert np.allclose(sharpen(w, 1.0), plain, atol=1e-12)


def test_sharpening_matches_reference():
    rng = np.random.default_rng(1)
    for tau in (1.0, 0.5, 0.1):
        w = rng.standard_normal(5)
        assert np.allclose(sharpen(w, tau), ref_sharpening(w, tau), atol=1e-12)


def test_sharpening_keeps_argmax():
    rng = np.random.default_rng(2)
    for _ in range(10):
        w = rng.standard_normal(6)
        for tau in (1.0, 0.3, 0.05, 0.01):
            assert np.argmax(sharpen(w, tau)) == np.argmax(w)


def test_sharpening_concentrates_as_tau_drops():
    w = np.array([1.0, 0.3, -0.5])
    taus = (1.0, 0.5, 0.2, 0.1, 0.05)
    peaks = [sharpen(w, tau).max() for tau in taus]
    assert all(b >= a - 1e-12 for a, b in zip(peaks, peaks[1:]))
    assert peaks[-1] > 0.999999


def test_sharpening_stays_on_simplex():
    rng = np.random.default_rng(3)
    for _ in range(10):
        out = sharpen(rng.standard_normal(4) * 3, 0.07)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) < 1e-12


def test_sharpening_rejects_bad_temperature():
    for tau in (0.0, -0.5):
        with pytest.raises(ContractError):
            sharpen(np.ones(3), tau)


# -------------------------------------------------------------------- schedule


def test_schedule_endpoints_exact():
    s = M.TauSchedule(total_steps=100, tau_min=0.05, floor_fraction=0.8)
    assert s.floor_step == 80
    assert s.value(0) == 1.0
    assert s.value(80) == 0.05
    assert s.value(99) == 0.05
    assert s.value(79) > 0.05


def test_schedule_monotone_nonincreasing():
    s = M.TauSchedule(total_steps=137, tau_min=0.05)
    vals = [s.value(i) for i in range(137)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_schedule_floor_step_rounds_up():
    assert M.TauSchedule(total_steps=7, tau_min=0.05).floor_step == 6
    assert M.TauSchedule(total_steps=1, tau_min=0.05).floor_step == 1


def test_schedule_flat_when_tau_min_is_one():
    s = M.TauSchedule(total_steps=10, tau_min=1.0)
    assert all(s.value(i) == 1.0 for i in range(10))


def test_schedule_validation():
    with pytest.raises(ContractError):
        M.TauSchedule(total_steps=0)
    with pytest.raises(ContractError):
        M.TauSchedule(total_steps=10, tau_min=0.0)
    with pytest.raises(ContractError):
        M.TauSchedule(total_steps=10, tau_min=1.5)
    with pytest.raises(ContractError):
        M.TauSchedule(total_steps=10, floor_fraction=0.0)
    s = M.TauSchedule(total_steps=10)
    with pytest.raises(ContractError):
        s.value(-1)


# ----------------------------------------------------------------------- model


def test_build_model_deterministic():
    m1 = M.build_model(HYPER, seed=5)
    m2 = M.build_model(HYPER, seed=5)
    m3 = M.build_model(HYPER, seed=6)
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert a.name == b.name
        assert np.array_equal(a.value, b.value)
    assert any(
        not np.array_equal(a.value, b.value)
        for a, b in zip(m1.parameters(), m3.parameters())
    )


def test_forward_shapes_and_simplex():
    x, z, d = small_inputs()
    m = M.build_model(HYPER, seed=0)
    res = m.forward(x, z, d)
    assert res.logits.data.shape == (2, 3)
    assert res.probs.data.shape == (2, 3)
    assert np.allclose(res.probs.data.sum(axis=1), 1.0, atol=1e-12)
    assert res.block_weights.shape == (2, 3)
    assert res.layer_weights.shape == (2,)
    assert abs(res.layer_weights.sum() - 1.0) < 1e-12
    for row in res.block_weights:
        assert abs(row.sum() - 1.0) < 1e-12
        assert np.all(row >= 0)
    assert res.predictions().shape == (2,)


def test_fresh_model_routes_equally():
    x, z, d = small_inputs()
    res = M.build_model(HYPER, seed=1).forward(x, z, d)
    assert np.allclose(res.block_weights, 1.0 / 3.0, atol=1e-10)
    assert np.allclose(res.layer_weights, 0.5, atol=1e-10)


def test_rank_two_input_means_batch_of_one():
    x, z, d = small_inputs()
    m = M.build_model(HYPER, seed=2)
    res2 = m.forward(x[0], z[0], d)
    res3 = m.forward(x[:1], z[:1], d)
    assert np.array_equal(res2.logits.data, res3.logits.data)


def test_token_permutation_leaves_logits():
    x, z, d = small_inputs(seed=3)
    m = M.build_model(HYPER, seed=3)
    rng = np.random.default_rng(4)
    px = rng.permutation(x.shape[1])
    pz = rng.permutation(z.shape[1])
    base = m.forward(x, z, d).logits.data
    perm = m.forward(x[:, px], z[:, pz], d).logits.data
    assert np.allclose(base, perm, atol=1e-10)


def test_single_block_variant_bypasses_routing():
    x, z, _ = small_inputs(seed=5)
    hyper = M.ModelHyper(
        input_width=3, width=4, block_width=4, hidden_width=5, n_layers=1, n_classes=3
    )
    m = M.build_model(hyper, seed=7, variant=M.Variant.parse("one_block:0"))
    res = m.forward(x, z)
    assert np.array_equal(res.block_weights, np.array([[1.0, 0.0, 0.0]]))
    assert np.array_equal(res.layer_weights, np.array([1.0]))
    tp = T.Tape()
    out, _ = m.layers[0].ncf.forward(tp.tensor(x))
    logits = nn.mlp_forward(out, m.head)
    assert np.array_equal(res.logits.data, logits.data)


def test_two_block_variant_masks_third_weight():
    x, z, d = small_inputs(seed=6)
    m = M.build_model(HYPER, seed=8, variant=M.Variant.parse("two_blocks:0,2"))
    m.layers[0].block_weights.value[...] = np.array([0.2, 9.0, 0.4])
    res = m.forward(x, z, d)
    for row in res.block_weights:
        assert row[1] == 0.0
        assert abs(row[0] + row[2] - 1.0) < 1e-12
    # the masked weight never leaks in, however large it is
    assert res.block_weights[0, 2] > 0.5


def test_low_temperature_concentrates_routing():
    x, z, d = small_inputs(seed=7)
    m = M.build_model(HYPER, seed=9)
    for layer in m.layers:
        layer.block_weights.value[...] = np.array([5.0, 0.0, 0.0])
    res = m.forward(x, z, d, tau=0.01)
    assert abs(res.block_weights[0, 0] - 1.0) < 1e-6


def test_no_sharpen_variant_ignores_temperature():
    x, z, d = small_inputs(seed=8)
    m = M.build_model(HYPER, seed=10, variant=M.Variant.parse("no_sharpen"))
    for layer in m.layers:
        layer.block_weights.value[...] = np.array([5.0, 0.0, 0.0])
    res = m.forward(x, z, d, tau=0.01)
    e = np.exp(np.array([5.0, 0.0, 0.0]))
    assert np.allclose(res.block_weights[0], e / e.sum(), atol=1e-12)


def test_forward_requires_dictionary_when_front_door_active():
    x, z, d = small_inputs(seed=9)
    m = M.build_model(HYPER, seed=11)
    with pytest.raises(StateError):
        m.forward(x, z)
    with pytest.raises(ContractError):
        m.forward(x, z, GlobalDictionary(centroids=np.zeros((4, 7))))
    with pytest.raises(ContractError):
        m.forward(x, z, np.zeros((4, 3)))
    m0 = M.build_model(HYPER, seed=11, variant=M.Variant.parse("one_block:0"))
    m0.forward(x, z)  # no dictionary needed without the front-door block


def test_model_gradients_against_finite_differences():
    x, z, d = small_inputs(seed=10)
    labels = np.array([0, 2])
    m = M.build_model(HYPER, seed=12)

    def build(tp_unused=None):
        res = m.forward(x, z, d, tau=0.7)
        loss = T.cross_entropy(res.logits, labels)
        return res.tape, loss

    tape, loss = build()
    m.zero_grads()
    tape.backward(loss)
    params = m.parameters()

    def loss_value():
        _, l = build()
        return float(l.data)

    fd = finite_difference_gradients(loss_value, params)
    for p in params:
        assert max_relative_error(p.grad, fd[p.name]) < 1e-4, p.name


# ------------------------------------------------------------------ checkpoint


def test_checkpoint_round_trip(tmp_path):
    x, z, d = small_inputs(seed=11)
    m = M.build_model(HYPER, seed=13)
    m.temperature = 0.37
    adam = nn.AdamState(step=9)
    for p in m.parameters():
        mm, vv = adam.slots(p)
        mm[...] = np.random.default_rng(0).standard_normal(mm.shape)
        vv[...] = np.abs(np.random.default_rng(1).standard_normal(vv.shape))
    path = tmp_path / "model.ckpt"
    M.save_checkpoint(path, m, adam=adam, meta={"epoch": 4})
    loaded, adam2, meta = M.load_checkpoint(path)
    assert meta == {"epoch": 4}
    assert loaded.temperature == 0.37
    assert adam2.step == 9
    assert str(loaded.variant) == str(m.variant)
    for a, b in zip(m.parameters(), loaded.parameters()):
        assert np.array_equal(a.value, b.value)
        assert np.array_equal(adam.m[a.name], adam2.m[b.name])
        assert np.array_equal(adam.v[a.name], adam2.v[b.name])
    r1 = m.forward(x, z, d)
    r2 = loaded.forward(x, z, d)
    assert np.array_equal(r1.logits.data, r2.logits.data)


def test_checkpoint_without_optimizer(tmp_path):
    m = M.build_model(HYPER, seed=14)
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, m)
    _, adam, meta = M.load_checkpoint(path)
    assert adam is None
    assert meta == {}


def test_checkpoint_corruption_detected(tmp_path):
    m = M.build_model(HYPER, seed=15)
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, m)
    raw = path.read_bytes()

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        M.load_checkpoint(bad)

    bad.write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        M.load_checkpoint(bad)

    bad.write_bytes(raw[:20])
    with pytest.raises(CheckpointError):
        M.load_checkpoint(bad)

    bad.write_bytes(raw + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="blob"):
        M.load_checkpoint(bad)

    bad.write_bytes(raw[:3])
    with pytest.raises(CheckpointError):
        M.load_checkpoint(bad)
