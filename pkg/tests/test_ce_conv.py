import numpy as np
import pytest

import tensor as T
from ce_conv import CEConvLayer, ce_forward, gate, make_ce_conv, mixed_kernel
from errors import ShapeError
from gradcheck import finite_diff_check
from oracles import naive_conv2d, naive_depthwise


def _with_experts(layer: CEConvLayer, kernels: list) -> CEConvLayer:
    return CEConvLayer(experts=[T.parameter(k) for k in kernels], gate_w1=layer.gate_w1, gate_b1=layer.gate_b1,
                       gate_w2=layer.gate_w2, gate_b2=layer.gate_b2, mode=layer.mode, name=layer.name)


def test_gate_on_zero_input_is_one_half():
    layer = make_ce_conv(0, "ce", 4, 2, 3, n_experts=3)
    alpha = gate(layer, T.tensor(np.zeros((4, 5, 5))))
    np.testing.assert_array_equal(alpha.data, np.full(3, 0.5))


def test_gate_matches_composition_of_ops(rng):
    layer = make_ce_conv(1, "ce", 4, 2, 3, n_experts=3)
    x = T.tensor(rng.normal(size=(4, 5, 5)))
    pooled = x.data.mean(axis=(1, 2))
    hidden = np.maximum(layer.gate_w1.data @ pooled + layer.gate_b1.data, 0.0)
    expected = 1.0 / (1.0 + np.exp(-(layer.gate_w2.data @ hidden + layer.gate_b2.data)))
    np.testing.assert_allclose(gate(layer, x).data, expected, atol=1e-14)
    assert np.all((expected > 0) & (expected < 1))


def test_gate_first_layer_is_homogeneous(rng):
    layer = make_ce_conv(2, "ce", 2, 2, 1, n_experts=2, reduction=1)
    x = rng.normal(size=(2, 3, 3))
    pre = [layer.gate_w1.data @ (k * x).mean(axis=(1, 2)) for k in (1.0, 2.0)]
    np.testing.assert_allclose(pre[1], 2 * pre[0], atol=1e-14)


def test_gate_channel_mismatch():
    layer = make_ce_conv(0, "ce", 4, 2, 3)
    with pytest.raises(ShapeError):
        gate(layer, T.tensor(np.zeros((3, 4, 4))))


def test_equal_experts_factorize(rng):
    w = rng.normal(size=(2, 3, 3, 3))
    layer = _with_experts(make_ce_conv(3, "ce", 3, 2, 3, n_experts=4), [w] * 4)
    x = T.tensor(rng.normal(size=(3, 5, 5)))
    total_alpha = gate(layer, x).data.sum()
    expected = T.conv2d(x, T.tensor(w)).data * total_alpha
    np.testing.assert_allclose(ce_forward(layer, x).data, expected, atol=1e-12)


def test_single_expert_degenerates_to_scaled_kernel(rng):
    layer = make_ce_conv(4, "ce", 3, 2, 3, n_experts=1)
    x = T.tensor(rng.normal(size=(3, 4, 4)))
    alpha = gate(layer, x).data[0]
    expected = T.conv2d(x, T.tensor(alpha * layer.experts[0].data)).data
    np.testing.assert_allclose(ce_forward(layer, x).data, expected, atol=1e-12)


def test_mixture_then_convolve_oracle(rng):
    layer = make_ce_conv(5, "ce", 2, 3, 3, n_experts=3)
    x = rng.normal(size=(2, 4, 4))
    alpha = gate(layer, T.tensor(x)).data
    kernel = sum(a * w.data for a, w in zip(alpha, layer.experts))
    np.testing.assert_allclose(ce_forward(layer, T.tensor(x)).data, naive_conv2d(x, kernel), atol=1e-12)
    np.testing.assert_allclose(mixed_kernel(layer, T.tensor(alpha)).data, kernel, atol=1e-14)


def test_depthwise_mode_matches_oracle(rng):
    layer = make_ce_conv(6, "dw", 3, 3, 3, n_experts=2, mode="depthwise")
    assert layer.experts[0].shape == (3, 3, 3)
    x = rng.normal(size=(3, 4, 4))
    alpha = gate(layer, T.tensor(x)).data
    kernel = alpha[0] * layer.experts[0].data + alpha[1] * layer.experts[1].data
    np.testing.assert_allclose(ce_forward(layer, T.tensor(x)).data, naive_depthwise(x, kernel), atol=1e-12)


def test_large_gate_bias_approaches_expert_sum(rng):
    layer = make_ce_conv(7, "ce", 2, 2, 3, n_experts=3)
    x = T.tensor(rng.normal(size=(2, 4, 4)))
    target = T.conv2d(x, T.tensor(sum(w.data for w in layer.experts))).data
    distances = []
    for bias in (0.0, 2.0, 4.0, 8.0, 16.0):
        layer.gate_b2.data = np.full(3, bias)
        distances.append(np.abs(ce_forward(layer, x).data - target).max())
    assert all(a > b for a, b in zip(distances, distances[1:]))
    assert distances[-1] < 1e-5


def test_experts_have_distinct_initializations():
    layer = make_ce_conv(0, "ce", 3, 2, 3, n_experts=4)
    flat = [w.data.tobytes() for w in layer.experts]
    assert len(set(flat)) == 4
    assert np.all(layer.gate_b1.data == 0) and np.all(layer.gate_b2.data == 0)


def test_invalid_layers():
    with pytest.raises(ShapeError):
        make_ce_conv(0, "ce", 3, 2, 3, n_experts=0)
    with pytest.raises(ShapeError):
        make_ce_conv(0, "ce", 3, 2, 3, mode="grouped")


def test_layer_gradcheck_experts_and_gate(rng):
    layer = make_ce_conv(8, "ce", 4, 2, 3, n_experts=3)
    layer.gate_b1.data = rng.normal(size=layer.gate_b1.shape)
    x = T.tensor(rng.normal(size=(4, 4, 4)))
    proj = rng.normal(size=(2, 4, 4))

    def loss(_p):
        return T.sum_all(T.elem_mul(ce_forward(layer, x), proj))

    for name, param in layer.parameters().items():
        assert finite_diff_check(loss, param) < 1e-5, name
    assert finite_diff_check(lambda t: T.sum_all(T.elem_mul(ce_forward(layer, t), proj)), x) < 1e-5
