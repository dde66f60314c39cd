"""Transformer gate: intra-modal self-attention, inter-modal cross-attention
and a learned convex gate over the three enhanced streams of each modality."""
import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import LayerNorm, Linear, Module, MultiHeadAttention

MODALITIES = ("text", "audio", "visual")


class EncoderBlock(Module):
    """Post-norm encoder block whose residual comes from the query stream.

    out = Norm(FFN(u) + u),  u = Norm(Attn(query, kv, kv) + query)
    """

    def __init__(self, d, d_ff, heads, rng, dropout=0.0, dtype=np.float32):
        if d_ff < d:
            raise ShapeError(f"FFN inner width {d_ff} must be >= model width {d}")
        self.attn = MultiHeadAttention(d, heads, rng, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.ff1 = Linear(d, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.dropout = dropout

    def __call__(self, query, kv, ctx, key_mask=None):
        if query.shape[:-2] != kv.shape[:-2] or query.shape[-2] != kv.shape[-2]:
            raise ShapeError(f"query/key streams must cover the same dialogue: {query.shape} vs {kv.shape}")
        a, w = self.attn(query, kv, key_mask)
        a = T.dropout(a, self.dropout, ctx.rng, ctx.training)
        u = self.norm1(a + query)
        f = self.ff2(T.relu(self.ff1(u)))
        f = T.dropout(f, self.dropout, ctx.rng, ctx.training)
        return self.norm2(f + u), w


class Gate(Module):
    """Per-utterance gate over three equal-shape sources.

    ``softmax`` mode forms a convex combination; ``sigmoid`` mode weighs each
    source independently in (0, 1).
    """

    def __init__(self, d, rng, mode="softmax", dtype=np.float32):
        if mode not in ("softmax", "sigmoid"):
            raise ShapeError(f"unknown gate mode {mode!r}")
        self.proj = Linear(3 * d, 3, rng, dtype)
        self.mode = mode

    def __call__(self, u1, u2, u3):
        if not (u1.shape == u2.shape == u3.shape):
            raise ShapeError(f"gate sources differ in shape: {u1.shape}, {u2.shape}, {u3.shape}")
        logits = self.proj(T.concat([u1, u2, u3], axis=-1))
        w = T.softmax(logits, axis=-1) if self.mode == "softmax" else T.sigmoid(logits)
        h = w[..., 0:1] * u1 + w[..., 1:2] * u2 + w[..., 2:3] * u3
        return h, w


def sinusoidal_positions(n, d, dtype=np.float32):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


class ModalityFusion(Module):
    def __init__(self, target, d, d_ff, heads, rng, dropout=0.0, gate_mode="softmax", dtype=np.float32):
        self.target = target
        self.sources = tuple(m for m in MODALITIES if m != target)
        self.self_block = EncoderBlock(d, d_ff, heads, rng, dropout, dtype)
        self.cross_blocks = {m: EncoderBlock(d, d_ff, heads, rng, dropout, dtype) for m in self.sources}
        self.gate = Gate(d, rng, gate_mode, dtype)

    def __call__(self, streams, ctx, key_mask=None, trace=None):
        u = streams[self.target]
        own, w_self = self.self_block(u, u, ctx, key_mask)
        crossed, w_cross = [], {}
        for m in self.sources:
            out, w = self.cross_blocks[m](u, streams[m], ctx, key_mask)
            crossed.append(out)
            w_cross[m] = w
        h, gw = self.gate(own, *crossed)
        if trace is not None:
            trace["self_attention"] = w_self.data
            trace["cross_attention"] = {m: w.data for m, w in w_cross.items()}
            trace["gate"] = gw.data
        return h


class TransformerGate(Module):
    """Independent fusion pipelines per modality (no parameter sharing)."""

    def __init__(self, d, d_ff, heads, rng, dropout=0.0, gate_mode="softmax",
                 positional=False, dtype=np.float32):
        self.pipelines = {m: ModalityFusion(m, d, d_ff, heads, rng, dropout, gate_mode, dtype)
                          for m in MODALITIES}
        self.positional = positional
        self.d = d

    def __call__(self, streams, ctx, key_mask=None, trace=None):
        lengths = {s.shape for s in streams.values()}
        if len(lengths) != 1:
            raise ShapeError(f"modality streams differ in shape: {sorted(lengths)}")
        if self.positional:
            n = next(iter(streams.values())).shape[-2]
            pe = T.Tensor(sinusoidal_positions(n, self.d, next(iter(streams.values())).dtype))
            streams = {m: s + pe for m, s in streams.items()}
        out = {}
        for m in MODALITIES:
            sub = {} if trace is not None else None
            out[m] = self.pipelines[m](streams, ctx, key_mask, sub)
            if trace is not None:
                trace[m] = sub
        return out
