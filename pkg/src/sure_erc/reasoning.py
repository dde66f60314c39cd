"""Iterative contextual reasoning over a dialogue for one modality.

A causal LSTM plus a linear layer encodes the utterance latents into a global
memory. Each utterance then refines a query over ``iterations`` rounds:
attend over the memory, concatenate, project back to the query width, and
step a second LSTM whose output becomes the next query.
"""
import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Linear, LSTMCell, Module


def retrieve(q, memory, key_mask=None):
    """Single-head scaled dot-product attention of ``q`` over ``memory``.

    Keys and values are both the memory vectors. Returns ``(r, weights)``.
    """
    if memory.shape[-2] == 0:
        raise ShapeError("retrieval over an empty memory")
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, :]
    return T.scaled_dot_attention(q, memory, memory, mask)


class IterativeReasoning(Module):
    def __init__(self, d_z, d_q, rng, iterations=3, enabled=True, dtype=np.float32):
        if iterations < 0:
            raise ShapeError(f"iterations must be >= 0, got {iterations}")
        self.query = Linear(d_z, d_q, rng, dtype)
        self.enabled = enabled
        self.iterations = iterations if enabled else 0
        if enabled:
            self.memory_lstm = LSTMCell(d_z, d_q, rng, dtype)
            self.memory_out = Linear(d_q, d_q, rng, dtype)
            self.project = Linear(2 * d_q, d_q, rng, dtype)
            self.reason_lstm = LSTMCell(d_q, d_q, rng, dtype)

    def build_memory(self, z):
        """``z`` [..., N, d_z] -> memory [..., N, d_q], left to right from a zero state."""
        n = z.shape[-2]
        if n == 0:
            raise ShapeError("cannot build memory for an empty dialogue")
        h, c = self.memory_lstm.initial_state(z.shape[:-2], z.dtype)
        hs = []
        for i in range(n):
            h, c = self.memory_lstm(z[..., i, :], (h, c))
            hs.append(h)
        return self.memory_out(T.stack(hs, axis=-2))

    def reason(self, z, memory, key_mask=None, trace=None):
        """Refined cue per utterance: [..., N, d_z] -> [..., N, d_q]."""
        q = self.query(z)
        if self.iterations == 0:
            return q
        state = self.reason_lstm.initial_state(q.shape[:-1], q.dtype)
        for _ in range(self.iterations):
            r, w = retrieve(q, memory, key_mask)
            if trace is not None:
                trace.append(w.data)
            q_hat = self.project(T.concat([q, r], axis=-1))
            state = self.reason_lstm(q_hat, state)
            q = state[0]
        return q

    def __call__(self, z, key_mask=None, trace=None):
        if not self.enabled:
            return self.query(z)
        memory = self.build_memory(z)
        return self.reason(z, memory, key_mask, trace)
