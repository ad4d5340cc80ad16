import math

import numpy as np
import pytest

from mmimpute.diff import (AdamConfig, ParamSet, Tensor, TrainingError, adam_step, bce_loss,
                           ce_from_probs, ce_loss, grad_check, layer_forward, mse_masked)
from mmimpute.diff import layers as L
from mmimpute.diff import tensor as T
from mmimpute.diff.params import load_tensors, save_tensors
from mmimpute.rng import make_rng


def test_affine_identity():
    ps = ParamSet({"fc.w": np.eye(3, dtype=np.float32), "fc.b": np.zeros(3, np.float32)})
    x = Tensor(np.array([[1.0, -2.0, 3.5]], np.float32))
    np.testing.assert_array_equal(layer_forward("affine", ps, x, prefix="fc").data, x.data)


def test_affine_shape_mismatch():
    ps = ParamSet({"fc.w": np.eye(3, dtype=np.float32), "fc.b": np.zeros(3, np.float32)})
    with pytest.raises(ValueError):
        layer_forward("affine", ps, Tensor(np.ones((1, 4), np.float32)), prefix="fc")


def test_relu_values():
    out = layer_forward("relu", None, Tensor(np.array([-1.0, 2.0])))
    np.testing.assert_array_equal(out.data, [0.0, 2.0])


def test_conv_all_ones_valid():
    ps = ParamSet({"c.w": np.ones((1, 1, 3, 3)), "c.b": np.zeros(1)})
    out = layer_forward("conv", ps, Tensor(np.ones((1, 1, 5, 5))), prefix="c", stride=1, pad=0)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 9.0))


def _brute_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w) + b
    return out


def test_conv_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 4, 4))
    b = rng.standard_normal(4)
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1).data
    np.testing.assert_allclose(out, _brute_conv(x, w, b, 2, 1), atol=1e-12)


def test_transpose_conv_is_adjoint():
    # <conv(x), y> == <x, tconv(y)> with shared weights and zero bias
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((5, 3, 4, 4))
    y = rng.standard_normal((2, 5, 4, 4))
    cx = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(5)), 2, 1).data
    ty = T.conv_transpose2d(Tensor(y), Tensor(w), Tensor(np.zeros(3)), 2, 1).data
    assert ty.shape == x.shape
    assert np.vdot(cx, y) == pytest.approx(np.vdot(x, ty), rel=1e-12)


def test_ce_uniform_is_log2():
    assert ce_loss(np.zeros((4, 2)), [0, 1, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-12)
    assert ce_from_probs(np.full((3, 2), 0.5), [0, 1, 0]).item() == pytest.approx(0.6931, abs=1e-4)


def test_ce_perfect_below_floor():
    assert ce_loss(np.array([[40.0, -40.0]]), [0]).item() <= -math.log(1 - 1e-7)
    assert ce_from_probs(np.array([[1.0, 0.0]]), [0]).item() <= -math.log(1 - 1e-7) + 1e-15


def test_bce_hand_value_and_symmetry():
    assert bce_loss(np.array([0.25]), [1]).item() == pytest.approx(1.3863, abs=1e-4)
    assert bce_loss(np.array([0.25]), [1]).item() == pytest.approx(-math.log(0.25), abs=1e-12)
    rng = np.random.default_rng(3)
    p = rng.uniform(0.01, 0.99, 20)
    t = (rng.random(20) < 0.5).astype(float)
    assert bce_loss(p, t).item() == pytest.approx(bce_loss(1 - p, 1 - t).item(), abs=1e-12)


def test_adam_zero_grad_is_noop():
    ps = ParamSet({"w": np.array([0.5, -1.0], np.float32)})
    adam_step(ps, {"w": np.zeros(2, np.float32)}, AdamConfig())
    np.testing.assert_array_equal(ps["w"].data, [0.5, -1.0])


def test_adam_first_step_closed_form():
    cfg = AdamConfig(lr=1e-4)
    ps = ParamSet({"w": np.array(0.0)})
    adam_step(ps, {"w": np.array(1.0)}, cfg, t=1)
    # m_hat = v_hat = 1 on the first step
    assert ps["w"].data == pytest.approx(-1e-4 / (1 + 1e-8), abs=1e-15)
    assert abs(ps["w"].data - (-9.9999e-5)) < 1e-9


def test_adam_constant_gradient_step_tends_to_lr():
    cfg = AdamConfig(lr=1e-3)
    ps = ParamSet({"w": np.array(0.0)})
    prev = 0.0
    for t in range(1, 5001):
        adam_step(ps, {"w": np.array(2.0)}, cfg, t=t)
        step, prev = prev - float(ps["w"].data), float(ps["w"].data)
    assert step == pytest.approx(1e-3, rel=1e-6)


def test_adam_rejects_nonfinite_with_name():
    ps = ParamSet({"enc.w": np.zeros(2)})
    with pytest.raises(TrainingError, match="enc.w"):
        adam_step(ps, {"enc.w": np.array([0.0, np.nan])}, AdamConfig())


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(lr=0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)


def test_gradcheck_quadratic():
    ps = ParamSet({"x": np.array([0.3, -1.2, 2.0])})
    rep = grad_check(lambda: T.mul(T.sum(T.square(ps["x"])), 0.5), ps, tol=1e-8)
    assert rep.ok, rep.summary()
    assert rep.max_rel_err < 1e-8


def _composite(seed):
    rng = make_rng("composite", seed)
    ps = ParamSet()
    L.init_affine(ps, "a", 5, 7, rng, np.float64)
    L.init_affine(ps, "b", 7, 1, rng, np.float64)
    x = rng.standard_normal((6, 5))
    y = (rng.random(6) < 0.5).astype(float)

    def fn():
        h = T.relu(L.affine(ps, "a", Tensor(x)))
        p = T.sigmoid(L.affine(ps, "b", h))
        return bce_loss(T.reshape(p, (-1,)), y)

    return ps, fn


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_affine_relu_bce(seed):
    ps, fn = _composite(seed)
    rep = grad_check(fn, ps, tol=1e-3, per_tensor=20)
    assert rep.ok, rep.summary()


def test_gradcheck_flags_corrupted_gradient():
    ps, fn = _composite(0)

    def corrupted():
        out = fn()
        # scale the backward signal by 1.1 without changing the value
        return Tensor(out.data, requires_grad=True, _parents=(out,), _backward=lambda g: (1.1 * g,))

    rep = grad_check(corrupted, ps, tol=1e-3, per_tensor=20)
    assert not rep.ok
    assert rep.failures


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_conv_stack(seed):
    rng = make_rng("convstack", seed)
    ps = ParamSet()
    L.init_conv(ps, "c1", 2, 3, 4, rng, np.float64)
    L.init_tconv(ps, "t1", 3, 2, 4, rng, np.float64)
    L.init_gru(ps, "g", 2 * 8 * 8, 4, rng, np.float64)
    x = rng.standard_normal((3, 2, 8, 8))
    h0 = rng.standard_normal((3, 4))

    def fn():
        h = T.leaky_relu(L.conv(ps, "c1", Tensor(x)))
        up = T.tanh(L.tconv(ps, "t1", h))
        flat = T.reshape(up, (3, -1))
        hh = L.gru_cell(ps, "g", flat, Tensor(h0))
        hh = L.gru_cell(ps, "g", flat, hh)
        return T.mean(T.square(hh)) + T.mean(T.log_softmax(T.concat([hh, hh * 0.5], axis=1)))

    rep = grad_check(fn, ps, tol=1e-3, per_tensor=12, seed=seed)
    assert rep.ok, rep.summary()


def test_mse_masked_only_counts_observed():
    x = np.array([[1.0, 2.0, 3.0]])
    m = np.array([[1.0, 0.0, 1.0]])
    xh = Tensor(np.array([[2.0, 100.0, 3.0]]))
    assert mse_masked(xh, x, m).item() == pytest.approx(0.5)


def test_tensor_file_round_trip(tmp_path):
    arrays = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "a.b": np.float32(1.5) * np.ones(3, np.float32)}
    save_tensors(arrays, tmp_path / "ck.bin")
    back = load_tensors(tmp_path / "ck.bin")
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    raw = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_tensors(tmp_path / "bad.bin")


def test_layer_forward_deterministic_and_finite():
    rng = make_rng("det", 0)
    ps = ParamSet()
    L.init_conv(ps, "c", 1, 4, 4, rng)
    x = Tensor(rng.standard_normal((2, 1, 8, 8)).astype(np.float32))
    a = layer_forward("conv", ps, x, prefix="c").data
    b = layer_forward("conv", ps, x, prefix="c").data
    np.testing.assert_array_equal(a, b)
    assert np.all(np.isfinite(a))
