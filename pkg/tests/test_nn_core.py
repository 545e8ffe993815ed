from __future__ import annotations

import math

import numpy as np
import pytest
from gradcheck import check_loss, check_module
from hypothesis import given
from hypothesis import strategies as st

from exertion_loop.ecg_encoder import ConvNormPool
from exertion_loop.errors import FrozenModelError, NumericError, ShapeError
from exertion_loop.nn import (
    Adam,
    AdamState,
    AdaptiveAvgPool1d,
    BatchNorm1d,
    Conv1d,
    Flatten,
    Linear,
    MaxPool1d,
    Parameter,
    ReLU,
    Sequential,
    Swish,
    adam_step,
    cross_entropy,
    load_module,
    relu,
    save_module,
    smooth_l1,
    swish,
)

F64 = np.float64
SHAPES = range(20)
TOL = 1e-4


def away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-9) * (margin + np.abs(x)), x)


def distinct(rng, shape):
    # values spaced well beyond the finite-difference step, so max-pool ties never flip
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 0.001, n)).reshape(shape) - 0.005 * n


def assert_ok(errors):
    bad = {k: v for k, v in errors.items() if not v < TOL}
    assert not bad, bad


# -- gradient checks on 20 random shapes per layer --------------------------------

@pytest.mark.parametrize("seed", SHAPES)
def test_conv1d_gradients(seed):
    rng = np.random.default_rng(seed)
    b, c, o, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 6)
    pad = int(rng.integers(0, k))
    length = int(rng.integers(max(1, k - 2 * pad), 12))
    layer = Conv1d(c, o, k, pad, rng, F64)
    assert_ok(check_module(layer, rng.standard_normal((b, c, length)), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_linear_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    n, i, o = rng.integers(1, 6), rng.integers(1, 10), rng.integers(1, 10)
    assert_ok(check_module(Linear(i, o, rng, F64), rng.standard_normal((n, i)), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_relu_gradients(seed):
    rng = np.random.default_rng(200 + seed)
    shape = tuple(rng.integers(1, 6, size=rng.integers(2, 4)))
    assert_ok(check_module(ReLU(), away_from_zero(rng, shape), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_swish_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    shape = tuple(rng.integers(1, 6, size=rng.integers(2, 4)))
    assert_ok(check_module(Swish(), 3 * rng.standard_normal(shape), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(400 + seed)
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 13)))
    assert_ok(check_module(MaxPool1d(2), distinct(rng, shape), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_adaptive_avgpool_gradients(seed):
    rng = np.random.default_rng(500 + seed)
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 12)))
    assert_ok(check_module(AdaptiveAvgPool1d(1), rng.standard_normal(shape), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_batchnorm_gradients(seed):
    rng = np.random.default_rng(600 + seed)
    c = int(rng.integers(1, 5))
    shape = (int(rng.integers(2, 5)), c, int(rng.integers(1, 8))) if seed % 2 else (int(rng.integers(2, 7)), c)
    bn = BatchNorm1d(c, dtype=F64)
    bn.gamma.value[...] = rng.uniform(0.5, 1.5, c)
    bn.beta.value[...] = rng.standard_normal(c)
    assert_ok(check_module(bn, rng.standard_normal(shape), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_batchnorm_eval_gradients(seed):
    rng = np.random.default_rng(650 + seed)
    c = int(rng.integers(1, 5))
    bn = BatchNorm1d(c, dtype=F64)
    bn.running_mean[...] = rng.standard_normal(c)
    bn.running_var[...] = rng.uniform(0.5, 2.0, c)
    bn.eval()
    assert_ok(check_module(bn, rng.standard_normal((int(rng.integers(1, 4)), c, 5)), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_flatten_gradients(seed):
    rng = np.random.default_rng(700 + seed)
    shape = tuple(int(v) for v in rng.integers(1, 5, size=3))
    assert_ok(check_module(Flatten(), rng.standard_normal(shape), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_convnormpool_gradients(seed):
    rng = np.random.default_rng(800 + seed)
    c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    block = ConvNormPool(c_in, c_out, 3, rng, F64)
    x = rng.standard_normal((int(rng.integers(2, 4)), c_in, int(rng.integers(4, 10))))
    assert_ok(check_module(block, x, rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_sequential_gradients(seed):
    rng = np.random.default_rng(900 + seed)
    c, length = int(rng.integers(1, 3)), int(rng.integers(3, 9))
    net = Sequential(Conv1d(c, 3, 3, 2, rng, F64), Swish(), Flatten(),
                     Linear(3 * (length + 2), 4, rng, F64), Swish(), Linear(4, 2, rng, F64))
    assert_ok(check_module(net, rng.standard_normal((2, c, length)), rng))


@pytest.mark.parametrize("seed", SHAPES)
def test_cross_entropy_gradients(seed):
    rng = np.random.default_rng(1000 + seed)
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    assert check_loss(cross_entropy, rng.standard_normal((n, k)), rng.integers(0, k, n)) < TOL


@pytest.mark.parametrize("seed", SHAPES)
def test_smooth_l1_gradients(seed):
    rng = np.random.default_rng(1100 + seed)
    shape = tuple(int(v) for v in rng.integers(1, 6, size=2))
    target = rng.standard_normal(shape)
    d = away_from_zero(rng, shape, 0.05) * 2
    d = np.where(np.abs(np.abs(d) - 1) < 0.01, d * 1.1, d)  # keep clear of the |d| = 1 seam
    assert check_loss(smooth_l1, target + d, target) < TOL


# -- examples --------------------------------------------------------------------

def test_conv_identity_kernel():
    conv = Conv1d(1, 1, 3, 1, dtype=F64)
    conv.weight.value[...] = [[[0, 1, 0]]]
    conv.bias.value[...] = 0
    x = np.arange(7, dtype=F64).reshape(1, 1, 7)
    np.testing.assert_array_equal(conv(x), x)


def test_conv_hand_example():
    conv = Conv1d(1, 1, 3, 0, dtype=F64)
    conv.weight.value[...] = 1.0
    conv.bias.value[...] = 0.0
    np.testing.assert_array_equal(conv(np.array([[[1.0, 2.0, 3.0]]])), [[[6.0]]])


def test_conv_shape_error_names_shapes():
    conv = Conv1d(2, 3, 3)
    with pytest.raises(ShapeError, match=r"\(1, 1, 5\)"):
        conv(np.zeros((1, 1, 5), dtype=np.float32))
    with pytest.raises(ShapeError):
        conv(np.zeros((1, 2, 2), dtype=np.float32))


@given(st.integers(1, 30), st.integers(0, 4), st.integers(1, 7))
def test_conv_output_length(length, pad, k):
    conv = Conv1d(1, 2, k, pad)
    if length + 2 * pad - k + 1 < 1:
        return
    assert conv(np.zeros((1, 1, length), dtype=np.float32)).shape[2] == length + 2 * pad - k + 1


def test_activation_examples():
    assert swish(np.array(0.0)) == 0.0
    assert swish(np.array(1.0)) == pytest.approx(0.731059, abs=1e-6)
    np.testing.assert_array_equal(relu(np.array([-3.0, 3.0])), [0.0, 3.0])


def test_swish_finite_for_huge_inputs():
    out = Swish()(np.array([-1e4, 1e4]))
    assert np.all(np.isfinite(out))


def test_maxpool_examples():
    x = np.array([[[1.0, 3.0, 2.0, 4.0]]])
    pool = MaxPool1d(2)
    np.testing.assert_array_equal(pool(x), [[[3.0, 4.0]]])
    np.testing.assert_array_equal(pool(np.zeros((1, 1, 5))).shape, (1, 1, 2))
    with pytest.raises(ShapeError):
        pool(np.zeros((1, 1, 0)))


def test_maxpool_tie_goes_to_first_index():
    pool = MaxPool1d(2)
    pool(np.array([[[2.0, 2.0]]]))
    np.testing.assert_array_equal(pool.backward(np.array([[[1.0]]])), [[[1.0, 0.0]]])


def test_adaptive_pool_constant():
    np.testing.assert_allclose(AdaptiveAvgPool1d()(np.full((2, 3, 7), 4.5)), np.full((2, 3, 1), 4.5))
    with pytest.raises(ShapeError):
        AdaptiveAvgPool1d()(np.zeros((1, 1, 0)))


def test_batchnorm_standardizes():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, (16, 4, 10))
    y = BatchNorm1d(4, dtype=F64)(x)
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1, atol=1e-4)


def test_batchnorm_identity_on_standard_batch():
    x = np.array([[-1.0], [1.0]])
    np.testing.assert_allclose(BatchNorm1d(1, dtype=F64)(x), x, atol=1e-5)


def test_batchnorm_needs_two_rows_in_training():
    with pytest.raises(ValueError):
        BatchNorm1d(2)(np.zeros((1, 2, 4), dtype=np.float32))


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm1d(1, dtype=F64)
    bn.running_mean[...] = 2.0
    bn.running_var[...] = 4.0
    bn.eval()
    np.testing.assert_allclose(bn(np.array([[4.0]])), [[1.0]], atol=1e-5)


def test_cross_entropy_examples():
    loss, grad = cross_entropy(np.zeros(3), 1)
    assert loss == pytest.approx(math.log(3), abs=1e-6)
    assert loss == pytest.approx(1.098612, abs=1e-6)
    assert grad.sum() == pytest.approx(0.0, abs=1e-12)
    assert cross_entropy(np.array([50.0, 0.0, 0.0]), 0)[0] < 1e-12
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(3), 3)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.data())
def test_cross_entropy_gradient_sums_to_zero(logits, data):
    label = data.draw(st.integers(0, len(logits) - 1))
    _, grad = cross_entropy(np.array(logits), label)
    assert abs(grad.sum()) < 1e-9


def test_smooth_l1_examples():
    assert smooth_l1(np.array([1.0]), np.array([1.0]))[0] == 0.0
    assert smooth_l1(np.array([0.5]), np.array([0.0]))[0] == pytest.approx(0.125)
    assert smooth_l1(np.array([2.0]), np.array([0.0]))[0] == pytest.approx(1.5)
    with pytest.raises(ShapeError):
        smooth_l1(np.zeros(2), np.zeros(3))


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_clip_equivalence():
    a, b = np.array([0.5]), np.array([0.5])
    sa, sb = AdamState(lr=0.01), AdamState(lr=0.01)
    for _ in range(3):
        adam_step([a], [np.array([1e6])], sa)
        adam_step([b], [np.array([100.0])], sb)
    np.testing.assert_array_equal(a, b)


def test_adam_first_step_hand_value():
    p = np.array([0.0])
    adam_step([p], [np.array([1.0])], AdamState(lr=0.1))
    expected = -0.1 * (1.0 / (1 - 0.9)) * 0.1 / (math.sqrt(1.0 * 0.001 / (1 - 0.999)) + 1e-8)
    assert p[0] == pytest.approx(expected, rel=1e-9)
    assert p[0] == pytest.approx(-0.1, abs=1e-6)


def test_adam_rejects_non_finite_gradient_by_name():
    param = Parameter(np.zeros(2))
    param.grad[...] = [np.nan, 0.0]
    opt = Adam([("layer.weight", param)], lr=0.1)
    with pytest.raises(NumericError, match="layer.weight"):
        opt.step()
    np.testing.assert_array_equal(param.value, 0.0)
    assert opt.state.step_count == 0


def test_frozen_module_refuses_backward():
    lin = Linear(2, 2)
    lin.freeze()
    lin(np.zeros((1, 2), dtype=np.float32))
    with pytest.raises(FrozenModelError):
        lin.backward(np.zeros((1, 2), dtype=np.float32))


def test_forward_is_deterministic():
    rng = np.random.default_rng(0)
    net = Sequential(Conv1d(1, 4, 3, 1, rng), ReLU(), Flatten(), Linear(40, 2, rng))
    x = rng.standard_normal((3, 1, 10)).astype(np.float32)
    np.testing.assert_array_equal(net(x), net(x))


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_checkpoint_roundtrip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    net = Sequential(Conv1d(1, 2, 3, 1, rng), BatchNorm1d(2), Flatten(), Linear(10, 2, rng))
    net.layers[1].running_mean[...] = [0.5, -0.5]
    path = tmp_path / f"ck{suffix}"
    save_module(net, path)
    other = Sequential(Conv1d(1, 2, 3, 1, np.random.default_rng(9)), BatchNorm1d(2), Flatten(),
                       Linear(10, 2, np.random.default_rng(9)))
    load_module(other, path)
    for (n1, p1), (n2, p2) in zip(net.named_parameters(), other.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.value, p2.value)
    np.testing.assert_array_equal(other.layers[1].running_mean, [0.5, -0.5])


def test_checkpoint_layout_mismatch(tmp_path):
    save_module(Linear(2, 3), tmp_path / "a.npz")
    with pytest.raises(ShapeError):
        load_module(Linear(3, 3), tmp_path / "a.npz")
