import numpy as np
import pytest

from sure_erc import tensor as T
from sure_erc.checks import finite_difference_check
from sure_erc.reasoning import IterativeReasoning, retrieve
from sure_erc.rng import Rng

from _util import lstm_reference


@pytest.fixture(autouse=True)
def f64():
    with T.precision("float64"):
        yield


def make(seed=0, d_z=4, d_q=3, iterations=3, enabled=True):
    return IterativeReasoning(d_z, d_q, Rng(seed), iterations, enabled, np.float64)


def z_of(seed, n=5, d=4, lead=()):
    return T.Tensor(Rng(seed).normal(lead + (n, d)))


def test_zero_iterations_is_the_query_map():
    r = make(iterations=0)
    z = z_of(1)
    np.testing.assert_array_equal(r(z).data, (z.data @ r.query.weight.data) + r.query.bias.data)


def test_disabled_has_only_query_parameters():
    r = make(enabled=False)
    assert [n for n, _ in r.named_parameters()] == ["query.weight", "query.bias"]
    z = z_of(2)
    np.testing.assert_array_equal(r(z).data, r.query(z).data)


def test_one_iteration_by_hand():
    r = make(3, iterations=1)
    z = z_of(4)
    memory = r.build_memory(z)
    q0 = r.query(z)
    ret, _ = retrieve(q0, memory)
    q_hat = r.project(T.concat([q0, ret], axis=-1))
    zeros = T.Tensor(np.zeros((5, 3)))
    h, _ = T.lstm_step(q_hat, (zeros, zeros), (r.reason_lstm.w_ih, r.reason_lstm.w_hh, r.reason_lstm.bias))
    np.testing.assert_array_equal(r(z).data, h.data)


def test_memory_matches_reference_recurrence():
    r = make(5, d_z=3, d_q=2)
    z = z_of(6, n=3, d=3)
    cell = r.memory_lstm
    h, c = np.zeros(2), np.zeros(2)
    hs = []
    for i in range(3):
        h, c = lstm_reference(z.data[i], h, c, cell.w_ih.data.tolist(), cell.w_hh.data.tolist(),
                              cell.bias.data.tolist())
        hs.append(h)
    expected = np.array(hs) @ r.memory_out.weight.data + r.memory_out.bias.data
    np.testing.assert_allclose(r.build_memory(z).data, expected, rtol=1e-12)


def test_single_utterance_memory_and_retrieval():
    r = make(7)
    z = z_of(8, n=1)
    memory = r.build_memory(z)
    assert memory.shape == (1, 3)
    out, w = retrieve(T.Tensor(Rng(9).normal((1, 3))), memory)
    np.testing.assert_array_equal(out.data, memory.data)
    np.testing.assert_array_equal(w.data, [[1.0]])


def test_memory_prefix_property():
    r = make(10)
    z = z_of(11, n=6)
    full = r.build_memory(z).data
    prefix = r.build_memory(z[:4]).data
    np.testing.assert_array_equal(full[:4], prefix)


def test_retrieval_closed_forms():
    mem = T.Tensor([[0.0, 1.0, 2.0], [0.0, -1.0, 4.0], [0.0, 3.0, 0.5]])
    out, w = retrieve(T.Tensor([[1.0, 0.0, 0.0]]), mem)
    np.testing.assert_allclose(out.data[0], mem.data.mean(0), rtol=1e-14)
    mem = T.Tensor([[2.0, 0.0], [0.0, 1.0]])
    q = T.Tensor([[1.0, 3.0]])
    out, w = retrieve(q, mem)
    logits = np.array([2.0, 3.0]) / np.sqrt(2)
    p = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(w.data[0], p, rtol=1e-14)
    np.testing.assert_allclose(out.data[0], p @ mem.data, rtol=1e-14)


def test_trace_has_one_distribution_per_iteration():
    r = make(12, iterations=4)
    trace = []
    r(z_of(13, lead=(2,)), trace=trace)
    assert len(trace) == 4
    for w in trace:
        assert w.shape == (2, 5, 5)
        assert (w >= 0).all() and np.abs(w.sum(-1) - 1).max() < 1e-6


def test_deterministic():
    r = make(14)
    z = z_of(15)
    np.testing.assert_array_equal(r(z).data, r(z).data)


def test_zero_memory_decouples_utterances():
    r = make(16)
    r.memory_out.weight.data[:] = 0
    r.memory_out.bias.data[:] = 0
    z = z_of(17)
    other = z.data.copy()
    other[1:] = Rng(18).normal((4, 4))
    np.testing.assert_allclose(r(z).data[0], r(T.Tensor(other)).data[0], rtol=1e-14)


def test_padding_does_not_leak():
    r = make(19)
    a, b = z_of(20, n=3), z_of(21, n=5)
    batch = np.zeros((2, 5, 4))
    batch[0, :3] = a.data
    batch[0, 3:] = 99.0  # padding garbage
    batch[1] = b.data
    mask = np.array([[True] * 3 + [False] * 2, [True] * 5])
    out = r(T.Tensor(batch), mask).data
    np.testing.assert_allclose(out[0, :3], r(a).data, rtol=1e-12)
    np.testing.assert_allclose(out[1], r(b).data, rtol=1e-12)


def test_gradient_through_reasoning():
    r = make(22, d_z=3, d_q=3, iterations=2)
    z = T.Tensor(Rng(23).uniform(-2, 2, (4, 3)), requires_grad=True)
    w = T.Tensor(Rng(24).normal((4, 3)))
    err, _ = finite_difference_check(lambda: T.tsum(r(z) * w), r.parameters() + [z], 1e-5)
    assert err < 1e-4
