import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sure_erc import tensor as T
from sure_erc.errors import ShapeError
from sure_erc.rng import Rng

from _util import grad_error, leaf, lstm_reference


@pytest.fixture(autouse=True)
def f64():
    with T.precision("float64"):
        yield


# -- forward examples ------------------------------------------------------------

def test_matmul_examples():
    b = T.Tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(T.matmul(T.Tensor(np.eye(2)), b).data, b.data)
    out = T.matmul(T.Tensor([[1.0, 2.0], [3.0, 4.0]]), T.Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(T.Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(T.Tensor([math.log(2), 0.0])).data, [2 / 3, 1 / 3], rtol=1e-15)
    big = T.softmax(T.Tensor([1000.0, 0.0])).data
    assert np.isfinite(big).all() and big[0] == pytest.approx(1.0) and big[1] < 1e-300


def test_softmax_rejects_bad_input():
    with pytest.raises(ShapeError):
        T.softmax(T.Tensor([np.nan, 0.0]))
    with pytest.raises(ShapeError, match="fully masked"):
        T.softmax(T.Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    y = T.softmax(T.Tensor(x), axis=-1).data
    assert np.abs(y.sum(axis=-1) - 1).max() < 1e-6
    assert (y > 0).all()


def test_layer_norm_examples():
    one, zero = T.Tensor(np.ones(3)), T.Tensor(np.zeros(3))
    np.testing.assert_allclose(T.layer_norm(T.Tensor([1.0, 1.0, 1.0]), one, zero).data, [0, 0, 0])
    g, b = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
    np.testing.assert_allclose(T.layer_norm(T.Tensor([1.0, 3.0]), g, b, eps=0.0).data, [-1, 1])
    np.testing.assert_allclose(T.layer_norm(T.Tensor([0.0, 2.0]), T.Tensor([2.0, 2.0]), T.Tensor([1.0, 1.0]),
                                            eps=0.0).data, [-1, 3])
    # with the default eps the result is close to, not exactly, the eps-free value
    np.testing.assert_allclose(T.layer_norm(T.Tensor([1.0, 3.0]), g, b).data, [-1, 1], atol=1e-5)


def test_layer_norm_row_mean_is_zero():
    x = T.Tensor(Rng(0).normal((50, 16)) * 5 + 3)
    y = T.layer_norm(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16))).data
    assert np.abs(y.mean(axis=-1)).max() < 1e-6


def test_lstm_zero_params_give_zero_h():
    H, d = 3, 4
    w_ih, w_hh, b = T.Tensor(np.zeros((d, 4 * H))), T.Tensor(np.zeros((H, 4 * H))), T.Tensor(np.zeros(4 * H))
    x = T.Tensor(Rng(1).normal(d))
    h, c = T.lstm_step(x, (T.Tensor(np.zeros(H)), T.Tensor(np.zeros(H))), (w_ih, w_hh, b))
    np.testing.assert_array_equal(h.data, np.zeros(H))


def test_lstm_matches_reference_and_range():
    rng = Rng(2)
    H, d = 2, 3
    x, h, c = rng.normal(d), rng.normal(H), rng.normal(H)
    w_ih, w_hh, b = rng.normal((d, 4 * H)) * 2, rng.normal((H, 4 * H)) * 2, rng.normal(4 * H)
    h2, c2 = T.lstm_step(T.Tensor(x), (T.Tensor(h), T.Tensor(c)), (T.Tensor(w_ih), T.Tensor(w_hh), T.Tensor(b)))
    rh, rc = lstm_reference(x, h, c, w_ih.tolist(), w_hh.tolist(), b.tolist())
    np.testing.assert_allclose(h2.data, rh, rtol=1e-12)
    np.testing.assert_allclose(c2.data, rc, rtol=1e-12)
    assert (np.abs(h2.data) < 1).all()


def test_lstm_rejects_inconsistent_params():
    with pytest.raises(ShapeError):
        T.lstm_step(T.Tensor(np.zeros(3)), (T.Tensor(np.zeros(2)), T.Tensor(np.zeros(2))),
                    (T.Tensor(np.zeros((3, 7))), T.Tensor(np.zeros((2, 8))), T.Tensor(np.zeros(8))))


def test_attention_examples():
    v = T.Tensor([[1.0, 2.0, 3.0]])
    out, w = T.scaled_dot_attention(T.Tensor([[0.3, -1.0]]), T.Tensor([[2.0, 5.0]]), v)
    np.testing.assert_array_equal(w.data, [[1.0]])
    np.testing.assert_array_equal(out.data, v.data)
    k = T.Tensor([[0.0, 1.0], [0.0, -2.0], [0.0, 3.0]])
    vals = T.Tensor(Rng(3).normal((3, 4)))
    out, w = T.scaled_dot_attention(T.Tensor([[1.0, 0.0]]), k, vals)
    np.testing.assert_allclose(out.data[0], vals.data.mean(axis=0), rtol=1e-14)
    out, w = T.scaled_dot_attention(T.Tensor([[1.0, 0.0]]), T.Tensor(np.eye(2)), T.Tensor(np.eye(2)))
    e = math.exp(1 / math.sqrt(2))
    np.testing.assert_allclose(w.data[0], [e / (e + 1), 1 / (e + 1)], rtol=1e-14)


def test_dropout_is_inverted():
    x = T.Tensor(np.ones((200, 200)))
    assert T.dropout(x, 0.5, None, training=False) is x
    y = T.dropout(x, 0.5, Rng(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.02


# -- backward ------------------------------------------------------------------------

def test_sum_and_product_gradients():
    x = T.Tensor(Rng(0).normal((3, 2)), requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))
    a, b = T.Tensor(3.0, requires_grad=True), T.Tensor(-2.0, requires_grad=True)
    (a * b).backward()
    assert (a.grad, b.grad) == (-2.0, 3.0)


def test_shared_node_visited_once():
    x = T.Tensor(2.0, requires_grad=True)
    y = x * x
    (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad == pytest.approx(16.0)


def test_backward_needs_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2).backward()


def test_leaves_get_matching_shapes():
    x, w = leaf(Rng(1), (4, 3)), leaf(Rng(2), (3,))
    T.tsum(T.tanh(x * w)).backward()
    assert x.grad.shape == x.shape and w.grad.shape == w.shape


def test_no_grad_builds_no_graph():
    x = T.Tensor(1.0, requires_grad=True)
    with T.no_grad():
        y = x * 3
    assert not y.requires_grad


def test_deep_chain_does_not_recurse():
    x = T.Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.backward()
    assert x.grad == 1.0


def test_forward_is_deterministic():
    def run():
        rng = Rng(9)
        a, b = T.Tensor(rng.normal((5, 4))), T.Tensor(rng.normal((4, 3)))
        return T.softmax(T.matmul(a, b)).data
    np.testing.assert_array_equal(run(), run())


# -- finite differences, inputs drawn from [-2, 2] -----------------------------------

R = Rng(123)

UNARY = {
    "exp": T.exp, "tanh": T.tanh, "sigmoid": T.sigmoid, "softplus": T.softplus, "square": T.square,
    "relu": T.relu, "mean": lambda x: T.mean(x, axis=0), "sum": lambda x: T.tsum(x, axis=1, keepdims=True),
    "reshape": lambda x: T.reshape(x, (3, 4)), "transpose": lambda x: T.transpose(x),
    "swapaxes": lambda x: T.swapaxes(T.reshape(x, (2, 2, 3)), 0, 2), "getitem": lambda x: x[1:, ::2],
    "fancy_getitem": lambda x: x[[0, 2, 0]], "softmax": lambda x: T.softmax(x, axis=0),
    "masked_softmax": lambda x: T.softmax(x, mask=np.array([True, False, True])),
    "log_softmax": T.log_softmax, "dropout": lambda x: T.dropout(x, 0.3, Rng(4), True),
    "scatter_rows": lambda x: T.scatter_rows(x, np.array([2, 0, 2, 1]), 3),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name):
    x = leaf(R.child(len(name)), (4, 3))
    if name == "relu":  # keep away from the kink
        x.data = np.where(np.abs(x.data) < 0.05, 0.5, x.data)
    assert grad_error(UNARY[name], x) < 1e-4


def test_log_gradient():
    x = leaf(Rng(5), (3, 3), 0.2, 2.0)
    assert grad_error(T.log, x) < 1e-4


BINARY = {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_op_gradients_with_broadcast(name):
    a = leaf(Rng(6), (4, 3))
    b = leaf(Rng(7), (3,), 0.5, 2.0) if name == "div" else leaf(Rng(7), (3,))
    assert grad_error(BINARY[name], a, b) < 1e-4


def test_matmul_linear_concat_stack_gradients():
    a, b, bias = leaf(Rng(8), (2, 4, 3)), leaf(Rng(9), (3, 5)), leaf(Rng(10), (5,))
    assert grad_error(T.matmul, a, b) < 1e-4
    assert grad_error(lambda x, w, c: T.linear(x, w, c), a, b, bias) < 1e-4
    c = leaf(Rng(11), (2, 4, 2))
    assert grad_error(lambda p, q: T.concat([p, q], axis=-1), a, c) < 1e-4
    assert grad_error(lambda p, q: T.stack([p, q], axis=1), a, leaf(Rng(12), (2, 4, 3))) < 1e-4


def test_layer_norm_gradient():
    x, g, b = leaf(Rng(13), (5, 6)), leaf(Rng(14), (6,)), leaf(Rng(15), (6,))
    assert grad_error(T.layer_norm, x, g, b) < 1e-4


def test_lstm_step_gradient():
    rng = Rng(16)
    x, h, c = leaf(rng, (3, 4)), leaf(rng, (3, 2)), leaf(rng, (3, 2))
    w_ih, w_hh, b = leaf(rng, (4, 8)), leaf(rng, (2, 8)), leaf(rng, (8,))

    def step(*args):
        h2, c2 = T.lstm_step(args[0], (args[1], args[2]), args[3:])
        return T.concat([h2, c2], axis=-1)

    assert grad_error(step, x, h, c, w_ih, w_hh, b) < 1e-4


def test_attention_gradient():
    rng = Rng(17)
    q, k, v = leaf(rng, (2, 3, 4)), leaf(rng, (2, 5, 4)), leaf(rng, (2, 5, 3))
    mask = np.array([True, True, False, True, False])
    assert grad_error(lambda a, b, c: T.scaled_dot_attention(a, b, c, mask)[0], q, k, v) < 1e-4


def test_precision_context():
    with T.precision("float32"):
        assert T.Tensor([1, 2]).dtype == np.float32
    assert T.Tensor([1, 2]).dtype == np.float64
    with pytest.raises(ValueError):
        T.set_default_dtype("float16")
