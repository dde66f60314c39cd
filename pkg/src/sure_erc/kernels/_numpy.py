"""Pure-numpy reference kernels.

Every function here has a twin in ``_numba`` with the same signature and
semantics. Inputs are 2-D, C-contiguous, float32 or float64.
"""
import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax_fwd(x, mask=None):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    mx = x.max(axis=1, keepdims=True)
    e = np.exp(x - mx)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gamma + beta, xhat, rstd


def layer_norm_bwd(gy, xhat, rstd, gamma):
    d = xhat.shape[1]
    gxhat = gy * gamma
    s1 = gxhat.sum(axis=1, keepdims=True)
    s2 = (gxhat * xhat).sum(axis=1, keepdims=True)
    gx = (rstd / d)[:, None] * (d * gxhat - s1 - xhat * s2)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def lstm_cell_fwd(pre, c_prev):
    """Gate order along the last axis is input, forget, candidate, output.

    Returns ``hc`` = [h, c] of width 2H and the activation cache
    [i, f, g, o, tanh(c)] of width 5H.
    """
    H = c_prev.shape[1]
    i = sigmoid(pre[:, :H])
    f = sigmoid(pre[:, H:2 * H])
    g = np.tanh(pre[:, 2 * H:3 * H])
    o = sigmoid(pre[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return np.concatenate([h, c], axis=1), np.concatenate([i, f, g, o, tc], axis=1)


def lstm_cell_bwd(ghc, acts, c_prev):
    H = c_prev.shape[1]
    i, f, g, o, tc = (acts[:, k * H:(k + 1) * H] for k in range(5))
    gh = ghc[:, :H]
    gc = ghc[:, H:] + gh * o * (1.0 - tc * tc)
    gpre = np.concatenate([
        gc * g * i * (1.0 - i),
        gc * c_prev * f * (1.0 - f),
        gc * i * (1.0 - g * g),
        gh * tc * o * (1.0 - o),
    ], axis=1)
    return gpre, gc * f


def adamw_step(p, g, m, v, lr, beta1, beta2, eps, weight_decay, step):
    """In-place decoupled-weight-decay Adam update on flat arrays."""
    p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def confusion_matrix(pred, gold, num_labels):
    idx = gold.astype(np.int64) * num_labels + pred.astype(np.int64)
    return np.bincount(idx, minlength=num_labels * num_labels).reshape(num_labels, num_labels)
