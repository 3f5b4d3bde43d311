import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionrnn import (Tape, Tensor, absolute, add, backward, concat,
                       concat_channels, mul, narrow, neg, reshape,
                       set_debug_checks, sigmoid, sub, tanh, tensor_mean,
                       tensor_sum, transpose)
from conftest import check_grads


def t64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# forward values

def test_elementwise_forward_values():
    a = Tensor(np.array([1.0, -2.0, 0.0]))
    b = Tensor(np.array([3.0, 4.0, -5.0]))
    assert np.array_equal(add(a, b).data, [4.0, 2.0, -5.0])
    assert np.array_equal(sub(a, b).data, [-2.0, -6.0, 5.0])
    assert np.array_equal(mul(a, b).data, [3.0, -8.0, 0.0])
    assert np.array_equal(neg(a).data, [-1.0, 2.0, 0.0])
    assert np.array_equal(absolute(a).data, [1.0, 2.0, 0.0])
    assert tensor_sum(a).item() == -1.0
    assert tensor_mean(b).item() == pytest.approx(2.0 / 3.0)


def test_sigmoid_tanh_reference_points():
    x = Tensor(np.array([0.0, 1.0, -1.0]))
    s = sigmoid(x).data
    assert s[0] == 0.5
    assert s[1] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-15)
    assert s[1] + s[2] == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(tanh(x).data, np.tanh(x.data))


def test_sigmoid_extreme_inputs_stay_finite():
    x = Tensor(np.array([-1e4, -100.0, 100.0, 1e4]))
    s = sigmoid(x).data
    assert np.all(np.isfinite(s))
    assert s[0] == 0.0 and s[-1] == 1.0


def test_scalar_operand_sugar():
    x = Tensor(np.array([2.0, 3.0]))
    assert np.array_equal((x + 1.0).data, [3.0, 4.0])
    assert np.array_equal((2.0 * x).data, [4.0, 6.0])
    assert np.array_equal((1.0 - x).data, [-1.0, -2.0])


# ---------------------------------------------------------------------------
# gradients vs finite differences

def test_three_op_chain_matches_fd(rng):
    a = t64(rng, 2, 3)
    b = t64(rng, 2, 3)
    check_grads(lambda: tensor_sum(mul(add(a, b), sigmoid(a))), [a, b])


def test_reuse_accumulates_both_paths(rng):
    x = t64(rng, 4)
    check_grads(lambda: tensor_sum(add(mul(x, x), x)), [x])


def test_broadcast_gradients_match_fd(rng):
    a = t64(rng, 3, 1, 4)
    b = t64(rng, 4)
    c = t64(rng, 1, 5, 1)
    check_grads(lambda: tensor_sum(mul(add(a, b), c)), [a, b, c])


def test_tanh_mean_abs_chain_fd(rng):
    x = Tensor(rng.standard_normal((3, 4)) + 0.5, requires_grad=True)
    check_grads(lambda: tensor_mean(absolute(tanh(x))), [x])


def test_absolute_subgradient_zero_at_kink():
    with Tape() as tape:
        x = Tensor(np.array([0.0, -2.0, 3.0]), requires_grad=True)
        backward(tensor_sum(absolute(x)), tape)
    assert np.array_equal(x.grad, [0.0, -1.0, 1.0])


def test_reshape_transpose_narrow_fd(rng):
    x = t64(rng, 2, 3, 4)
    def f():
        y = transpose(reshape(x, (6, 4)), (1, 0))
        return tensor_sum(mul(narrow(y, 0, 1, 2), narrow(y, 0, 1, 2)))
    check_grads(f, [x])


def test_concat_split_roundtrip(rng):
    x = rng.standard_normal((2, 5, 3))
    t = Tensor(x, requires_grad=True)
    parts = [narrow(t, 1, 0, 2), narrow(t, 1, 2, 1), narrow(t, 1, 3, 2)]
    glued = concat(parts, axis=1)
    assert np.array_equal(glued.data, x)
    check_grads(lambda: tensor_sum(mul(concat(
        [narrow(t, 1, 0, 2), narrow(t, 1, 2, 3)], axis=1), t)), [t])


def test_concat_channels_is_axis_minus3(rng):
    a = Tensor(rng.standard_normal((2, 3, 4, 4)))
    b = Tensor(rng.standard_normal((2, 5, 4, 4)))
    out = concat_channels(a, b)
    assert out.data.shape == (2, 8, 4, 4)
    assert np.array_equal(out.data, np.concatenate([a.data, b.data], axis=1))


def test_backward_is_deterministic(rng):
    x = rng.standard_normal((3, 3))
    grads = []
    for _ in range(2):
        with Tape() as tape:
            t = Tensor(x.copy(), requires_grad=True)
            backward(tensor_sum(mul(sigmoid(t), tanh(add(t, t)))), tape)
        grads.append(t.grad.copy())
    assert np.array_equal(grads[0], grads[1])


# ---------------------------------------------------------------------------
# tape discipline and errors

def test_no_tape_means_no_tracking():
    x = Tensor(np.ones(3), requires_grad=True)
    y = mul(x, x)
    assert not y.requires_grad
    assert y.grad is None


def test_backward_rejects_nonscalar(rng):
    with Tape() as tape:
        x = t64(rng, 2, 2)
        y = mul(x, x)
        with pytest.raises(ValueError, match="scalar"):
            backward(y, tape)


def test_backward_rejects_foreign_root():
    with Tape() as tape:
        z = Tensor(np.array(1.0), requires_grad=True)
        with pytest.raises(ValueError):
            backward(z, tape)


def test_nested_tapes_raise():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_narrow_range_errors():
    x = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        narrow(x, 1, 2, 2)
    with pytest.raises(ValueError):
        narrow(x, 5, 0, 1)


def test_concat_shape_errors():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        concat([a, b], axis=0)
    with pytest.raises(ValueError):
        concat([a, Tensor(np.zeros(3))], axis=0)
    with pytest.raises(ValueError):
        concat([], axis=0)


def test_debug_checks_flag_catches_nonfinite():
    with np.errstate(over="ignore"):
        set_debug_checks(True)
        try:
            big = Tensor(np.array([1e308]))
            with pytest.raises(FloatingPointError):
                mul(big, big)
        finally:
            set_debug_checks(False)
        assert np.isinf(mul(big, big).data[0])


def test_repeated_backward_resets_grads(rng):
    x = rng.standard_normal(4)
    with Tape() as tape:
        t = Tensor(x, requires_grad=True)
        y = tensor_sum(mul(t, t))
        backward(y, tape)
        first = t.grad.copy()
        backward(y, tape)
    assert np.array_equal(t.grad, first)


# ---------------------------------------------------------------------------
# properties

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 1234))
def test_mul_grad_is_other_operand(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((rows, cols)), requires_grad=True)
    b = Tensor(rng.standard_normal((rows, cols)), requires_grad=True)
    with Tape() as tape:
        backward(tensor_sum(mul(a, b)), tape)
    assert np.allclose(a.grad, b.data, atol=1e-12)
    assert np.allclose(b.grad, a.data, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_broadcast_add_grad_counts_uses(i, j, k):
    a = Tensor(np.zeros((i, 1, k)), requires_grad=True)
    b = Tensor(np.zeros((j, 1)), requires_grad=True)
    with Tape() as tape:
        backward(tensor_sum(add(a, b)), tape)
    assert np.array_equal(a.grad, np.full((i, 1, k), float(j)))
    assert np.array_equal(b.grad, np.full((j, 1), float(i * k)))
