"""Numba-compiled kernels, row-looped twins of ``_numpy``.

Scalar libm ``exp``/``tanh`` inside a jitted loop lose to numpy's SIMD
ufuncs, so the plain softmax and the LSTM forward pass, which are dominated
by them, dispatch to the numpy versions. The jitted variants stay available
(``*_jit``) for the parity tests and the benchmark.
"""
import math

import numpy as np
from numba import njit

from . import _numpy


@njit(cache=True, inline="always")
def _sig(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


@njit(cache=True)
def _softmax_plain(x):
    n, m = x.shape
    y = np.empty_like(x)
    for r in range(n):
        mx = -np.inf
        for j in range(m):
            if x[r, j] > mx:
                mx = x[r, j]
        s = 0.0
        for j in range(m):
            e = math.exp(x[r, j] - mx)
            y[r, j] = e
            s += e
        for j in range(m):
            y[r, j] /= s
    return y


@njit(cache=True)
def _softmax_masked(x, mask):
    n, m = x.shape
    y = np.zeros_like(x)
    for r in range(n):
        mx = -np.inf
        for j in range(m):
            if mask[r, j] and x[r, j] > mx:
                mx = x[r, j]
        s = 0.0
        for j in range(m):
            if mask[r, j]:
                e = math.exp(x[r, j] - mx)
                y[r, j] = e
                s += e
        for j in range(m):
            y[r, j] /= s
    return y


def softmax_fwd_jit(x, mask=None):
    if mask is None:
        return _softmax_plain(x)
    return _softmax_masked(x, mask)


def softmax_fwd(x, mask=None):
    if mask is None:
        return _numpy.softmax_fwd(x)
    return _softmax_masked(x, mask)


@njit(cache=True)
def softmax_bwd(y, gy):
    n, m = y.shape
    gx = np.empty_like(y)
    for r in range(n):
        dot = 0.0
        for j in range(m):
            dot += gy[r, j] * y[r, j]
        for j in range(m):
            gx[r, j] = y[r, j] * (gy[r, j] - dot)
    return gx


@njit(cache=True)
def layer_norm_fwd(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for r in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[r, j]
        mu /= d
        var = 0.0
        for j in range(d):
            t = x[r, j] - mu
            var += t * t
        var /= d
        rs = 1.0 / math.sqrt(var + eps)
        rstd[r] = rs
        for j in range(d):
            xh = (x[r, j] - mu) * rs
            xhat[r, j] = xh
            y[r, j] = xh * gamma[j] + beta[j]
    return y, xhat, rstd


@njit(cache=True)
def layer_norm_bwd(gy, xhat, rstd, gamma):
    n, d = gy.shape
    gx = np.empty_like(gy)
    ggamma = np.zeros(d, dtype=gy.dtype)
    gbeta = np.zeros(d, dtype=gy.dtype)
    for r in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            gxh = gy[r, j] * gamma[j]
            s1 += gxh
            s2 += gxh * xhat[r, j]
            ggamma[j] += gy[r, j] * xhat[r, j]
            gbeta[j] += gy[r, j]
        k = rstd[r] / d
        for j in range(d):
            gx[r, j] = k * (d * gy[r, j] * gamma[j] - s1 - xhat[r, j] * s2)
    return gx, ggamma, gbeta


@njit(cache=True)
def lstm_cell_fwd_jit(pre, c_prev):
    n, H = c_prev.shape
    hc = np.empty((n, 2 * H), dtype=pre.dtype)
    acts = np.empty((n, 5 * H), dtype=pre.dtype)
    for r in range(n):
        for j in range(H):
            i = _sig(pre[r, j])
            f = _sig(pre[r, H + j])
            g = math.tanh(pre[r, 2 * H + j])
            o = _sig(pre[r, 3 * H + j])
            c = f * c_prev[r, j] + i * g
            tc = math.tanh(c)
            hc[r, j] = o * tc
            hc[r, H + j] = c
            acts[r, j] = i
            acts[r, H + j] = f
            acts[r, 2 * H + j] = g
            acts[r, 3 * H + j] = o
            acts[r, 4 * H + j] = tc
    return hc, acts


lstm_cell_fwd = _numpy.lstm_cell_fwd


@njit(cache=True)
def lstm_cell_bwd(ghc, acts, c_prev):
    n, H = c_prev.shape
    gpre = np.empty((n, 4 * H), dtype=ghc.dtype)
    gc_prev = np.empty((n, H), dtype=ghc.dtype)
    for r in range(n):
        for j in range(H):
            i = acts[r, j]
            f = acts[r, H + j]
            g = acts[r, 2 * H + j]
            o = acts[r, 3 * H + j]
            tc = acts[r, 4 * H + j]
            gh = ghc[r, j]
            gc = ghc[r, H + j] + gh * o * (1.0 - tc * tc)
            gpre[r, j] = gc * g * i * (1.0 - i)
            gpre[r, H + j] = gc * c_prev[r, j] * f * (1.0 - f)
            gpre[r, 2 * H + j] = gc * i * (1.0 - g * g)
            gpre[r, 3 * H + j] = gh * tc * o * (1.0 - o)
            gc_prev[r, j] = gc * f
    return gpre, gc_prev


@njit(cache=True)
def adamw_step(p, g, m, v, lr, beta1, beta2, eps, weight_decay, step):
    decay = 1.0 - lr * weight_decay
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for j in range(p.size):
        gj = g[j]
        p[j] *= decay
        m[j] = beta1 * m[j] + (1.0 - beta1) * gj
        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj
        p[j] -= lr * (m[j] / bc1) / (math.sqrt(v[j] / bc2) + eps)


@njit(cache=True)
def confusion_matrix(pred, gold, num_labels):
    out = np.zeros((num_labels, num_labels), dtype=np.int64)
    for r in range(pred.size):
        out[gold[r], pred[r]] += 1
    return out
