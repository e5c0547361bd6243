import warnings

import numpy as np
import pytest

import tensor as T
from errors import ShapeError
from gradcheck import finite_diff_check, run_op_checks
from oracles import naive_conv2d, naive_depthwise


def test_conv2d_identity_kernel():
    x = T.tensor(np.arange(1.0, 10.0).reshape(1, 3, 3))
    out = T.conv2d(x, T.tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x.data)


def test_conv2d_dirac_3x3_is_exact_identity(rng):
    x = T.tensor(rng.normal(size=(2, 5, 5)))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(x, T.tensor(w)).data, x.data)


def test_conv2d_zero_input():
    out = T.conv2d(T.tensor(np.zeros((2, 4, 4))), T.tensor(np.ones((3, 2, 3, 3))))
    assert np.all(out.data == 0.0)


def test_conv2d_matches_naive_oracle(rng):
    x = rng.normal(size=(2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    out = T.conv2d(T.tensor(x), T.tensor(w))
    np.testing.assert_allclose(out.data, naive_conv2d(x, w), atol=1e-12)


def test_conv2d_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        T.conv2d(T.tensor(np.zeros((2, 4, 4))), T.tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(T.tensor(np.zeros((1, 4, 4))), T.tensor(np.zeros((1, 1, 2, 2))))


def test_depthwise_identity_and_constant_field(rng):
    x = T.tensor(rng.normal(size=(3, 4, 4)))
    assert np.array_equal(T.depthwise_conv2d(x, T.tensor(np.ones((3, 1, 1)))).data, x.data)

    const = T.tensor(np.full((1, 5, 5), 5.0))
    kernel = np.full((1, 3, 3), 2.0 / 9.0)
    out = T.depthwise_conv2d(const, T.tensor(kernel)).data
    np.testing.assert_allclose(out[0, 1:-1, 1:-1], 10.0, atol=1e-12)


def test_depthwise_matches_naive_oracle(rng):
    x = rng.normal(size=(3, 5, 4))
    w = rng.normal(size=(3, 3, 3))
    out = T.depthwise_conv2d(T.tensor(x), T.tensor(w))
    np.testing.assert_allclose(out.data, naive_depthwise(x, w), atol=1e-12)


def test_depthwise_channel_mismatch():
    with pytest.raises(ShapeError):
        T.depthwise_conv2d(T.tensor(np.zeros((2, 4, 4))), T.tensor(np.zeros((3, 3, 3))))


def test_gap(rng):
    assert np.allclose(T.gap(T.tensor(np.full((2, 3, 3), 3.0))).data, 3.0)
    assert np.all(T.gap(T.tensor(np.zeros((2, 3, 3)))).data == 0.0)
    x = rng.normal(size=(2, 2, 2))
    expected = [sum(x[c, i, j] for i in range(2) for j in range(2)) / 4 for c in range(2)]
    np.testing.assert_allclose(T.gap(T.tensor(x)).data, expected, atol=1e-15)


def test_softmax_sigmoid_concat(rng):
    np.testing.assert_allclose(T.softmax(T.tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-15)
    assert T.sigmoid(T.tensor(0.0)).item() == 0.5

    p = T.softmax(T.tensor(rng.normal(size=(4, 6)) * 10)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    a, b = rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 3, 3))
    cat = T.concat_channels(T.tensor(a), T.tensor(b)).data
    assert cat.shape == (5, 3, 3)
    assert np.array_equal(cat[:2], a) and np.array_equal(cat[2:], b)


def test_softplus_is_stable_for_large_inputs():
    out = T.softplus(T.tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert np.all(np.isfinite(out))
    assert out[1] == pytest.approx(np.log(2.0))
    assert out[2] == pytest.approx(800.0)


def test_backward_sum_and_square(rng):
    x = T.parameter(rng.normal(size=(2, 3)))
    with T.Tape():
        T.backward(T.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))

    with T.Tape():
        T.backward(T.sum_all(T.elem_mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates_shared_inputs():
    x = T.parameter(np.array([3.0]))
    with T.Tape():
        y = T.elem_add(T.scale(x, 2.0), T.elem_mul(x, x))
        T.backward(T.sum_all(y))
    assert x.grad[0] == pytest.approx(2.0 + 6.0)


def test_backward_unreached_leaf_gets_zero_grad():
    x, unused = T.parameter(np.ones(2)), T.parameter(np.ones(2))
    with T.Tape():
        T.elem_mul(unused, 1.0)
        T.backward(T.sum_all(x))
    assert np.array_equal(unused.grad, np.zeros(2))


def test_backward_rejects_non_scalar_and_untaped():
    x = T.parameter(np.ones(3))
    with T.Tape():
        with pytest.raises(ShapeError):
            T.backward(T.scale(x, 2.0))
    with pytest.raises(ShapeError):
        T.backward(T.sum_all(x))


def test_no_recording_outside_tape():
    x = T.parameter(np.ones(2))
    y = T.sum_all(x)
    assert y.tape is None and not y.requires_grad


def test_forward_is_deterministic(rng):
    x, w = rng.normal(size=(2, 6, 6)), rng.normal(size=(3, 2, 3, 3))
    first = T.conv2d(T.tensor(x), T.tensor(w)).data
    second = T.conv2d(T.tensor(x), T.tensor(w)).data
    assert first.tobytes() == second.tobytes()


def test_finite_diff_linear_map_is_exact(rng):
    w = T.tensor(rng.normal(size=(3, 4)))
    error = finite_diff_check(lambda x: T.sum_all(T.linear(x, w)), T.tensor(rng.normal(size=4)))
    assert error < 1e-9


def test_finite_diff_sigmoid_chain_and_cross_entropy(rng):
    def chain(x):
        return T.sum_all(T.sigmoid(T.scale(T.sigmoid(x), 3.0)))

    def cross_entropy(x):
        return T.scale(T.take(T.log_softmax(x), 2), -1.0)

    assert finite_diff_check(chain, T.tensor(rng.normal(size=5))) < 1e-5
    assert finite_diff_check(cross_entropy, T.tensor(rng.normal(size=4))) < 1e-5


def test_finite_diff_restores_data(rng):
    data = rng.normal(size=3)
    x = T.tensor(data.copy())
    finite_diff_check(lambda t: T.sum_all(T.elem_mul(t, t)), x)
    assert np.array_equal(x.data, data)
    assert not x.requires_grad


def test_every_registered_op_passes_gradcheck():
    rows = run_op_checks(seed=0, shapes=5)
    failed = [(r["op"], r["max_rel_error"]) for r in rows if not r["passed"]]
    assert not failed


def test_scalars_are_zero_dimensional(rng):
    assert T.tensor(0.0).shape == () and T.tensor(np.float64(2.5)).item() == 2.5
    logits = T.parameter(rng.normal(size=4))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with T.Tape():
            loss = T.elem_add(T.scale(T.take(T.log_softmax(logits), 2), -1.0),
                              T.elem_add(T.mean_abs(logits), T.max_all(logits)))
            T.backward(loss)
    assert loss.shape == () and logits.grad.shape == (4,)
