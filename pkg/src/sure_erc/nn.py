"""Parameter containers and small layers built on :mod:`sure_erc.tensor`."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import Rng


def init_uniform(rng, shape, fan_in, dtype):
    """Scaled fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    return T.parameter(rng.uniform(-bound, bound, shape, dtype=dtype))


@dataclass
class Context:
    """Per-forward switches: train/eval mode, randomness, optional trace sink."""

    training: bool = False
    rng: Rng = None
    trace: dict = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.training and self.rng is None:
            raise ValueError("training forward needs an rng")


class Module:
    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, T.Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        self.weight = init_uniform(rng, (d_in, d_out), d_in, dtype)
        self.bias = init_uniform(rng, (d_out,), d_in, dtype)

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear expects last extent {self.weight.shape[0]}, got {x.shape}")
        return T.linear(x, self.weight, self.bias)


class LSTMCell(Module):
    def __init__(self, d_in, d_hidden, rng, dtype=np.float32):
        self.w_ih = init_uniform(rng, (d_in, 4 * d_hidden), d_hidden, dtype)
        self.w_hh = init_uniform(rng, (d_hidden, 4 * d_hidden), d_hidden, dtype)
        self.bias = init_uniform(rng, (4 * d_hidden,), d_hidden, dtype)
        self.d_hidden = d_hidden

    def initial_state(self, lead_shape, dtype):
        z = T.Tensor(np.zeros(tuple(lead_shape) + (self.d_hidden,), dtype=dtype))
        return z, z

    def __call__(self, x, state):
        return T.lstm_step(x, state, (self.w_ih, self.w_hh, self.bias))


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32, eps=1e-5):
        self.gamma = T.parameter(np.ones(d, dtype=dtype))
        self.beta = T.parameter(np.zeros(d, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, d, heads, rng, dtype=np.float32):
        if d % heads:
            raise ShapeError(f"model width {d} not divisible by {heads} heads")
        self.heads = heads
        self.wq = Linear(d, d, rng, dtype)
        self.wk = Linear(d, d, rng, dtype)
        self.wv = Linear(d, d, rng, dtype)
        self.wo = Linear(d, d, rng, dtype)

    def _split(self, x):
        *lead, n, d = x.shape
        x = x.reshape(tuple(lead) + (n, self.heads, d // self.heads))
        return T.swapaxes(x, -2, -3)

    def __call__(self, query, kv, key_mask=None):
        """``query`` [..., n_q, d], ``kv`` [..., n_k, d]; ``key_mask`` [..., n_k] bool.

        Returns the projected output and weights of shape [..., heads, n_q, n_k].
        """
        q = self._split(self.wq(query))
        k = self._split(self.wk(kv))
        v = self._split(self.wv(kv))
        mask = None
        if key_mask is not None:
            mask = np.asarray(key_mask, dtype=bool)[..., None, None, :]
        out, w = T.scaled_dot_attention(q, k, v, mask)
        out = T.swapaxes(out, -2, -3)
        out = out.reshape(query.shape)
        return self.wo(out), w
