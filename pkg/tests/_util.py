"""Shared helpers for the test modules."""
import numpy as np

from sure_erc import tensor as T
from sure_erc.checks import finite_difference_check
from sure_erc.rng import Rng


def leaf(rng, shape, low=-2.0, high=2.0):
    return T.Tensor(rng.uniform(low, high, shape), requires_grad=True, dtype=np.float64)


def grad_error(fn, *inputs, seed=0):
    """Max relative AD/FD error of ``fn`` reduced with fixed random weights."""
    with T.no_grad():
        shape = fn(*inputs).shape
    w = T.Tensor(Rng(seed, 5).normal(shape), dtype=np.float64)

    def loss():
        return T.tsum(fn(*inputs) * w)

    err, _ = finite_difference_check(loss, list(inputs), 1e-5)
    return err


def lstm_reference(x, h, c, w_ih, w_hh, b):
    """Gate-by-gate LSTM step written with scalar loops."""
    H = len(h)
    pre = [sum(x[k] * w_ih[k][j] for k in range(len(x))) + sum(h[k] * w_hh[k][j] for k in range(H)) + b[j]
           for j in range(4 * H)]
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    h2, c2 = [], []
    for j in range(H):
        i, f, g, o = sig(pre[j]), sig(pre[H + j]), np.tanh(pre[2 * H + j]), sig(pre[3 * H + j])
        cj = f * c[j] + i * g
        c2.append(cj)
        h2.append(o * np.tanh(cj))
    return np.array(h2), np.array(c2)
