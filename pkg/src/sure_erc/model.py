"""End-to-end model: per-modality MoE encoder -> iterative reasoning ->
transformer gate -> emotion classifier."""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .classifier import EmotionClassifier
from .data import MODALITIES
from .fusion import TransformerGate
from .moe import UncertaintyMoE, kl_regularizer, load_balance_loss
from .nn import Linear, Module
from .reasoning import IterativeReasoning


@dataclass
class ModelOutput:
    logits: T.Tensor  # [B, L, K]
    routing: dict = field(default_factory=dict)  # modality -> RoutingDecision over B*L rows
    kl: T.Tensor = None
    balance: T.Tensor = None
    trace: dict = None


class SureModel(Module):
    """Hyperparameters come from a :class:`~sure_erc.harness.RunConfig`-like object."""

    def __init__(self, dims, num_labels, cfg, rng):
        dtype = T._resolve_dtype(cfg.precision)
        self.dims = {m: int(dims[m]) for m in MODALITIES}
        self.num_labels = num_labels
        self.use_moe = not cfg.disable_moe
        if self.use_moe:
            self.encoders = {m: UncertaintyMoE(self.dims[m], cfg.d_z, rng, cfg.num_experts, cfg.top_k,
                                               cfg.uncertainty_weight, cfg.renormalize_gates, dtype)
                             for m in MODALITIES}
        else:
            self.encoders = {m: Linear(self.dims[m], cfg.d_z, rng, dtype) for m in MODALITIES}
        self.reasoners = {m: IterativeReasoning(cfg.d_z, cfg.d_q, rng, cfg.iterations,
                                                not cfg.disable_reasoning, dtype)
                          for m in MODALITIES}
        self.to_model = ({m: Linear(cfg.d_q, cfg.d, rng, dtype) for m in MODALITIES}
                         if cfg.d != cfg.d_q else {})
        self.fusion = TransformerGate(cfg.d, cfg.d_ff, cfg.heads, rng, cfg.dropout, cfg.gate_mode,
                                      cfg.positional, dtype)
        self.classifier = EmotionClassifier(cfg.d, num_labels, rng, dtype)
        self.dtype = dtype
        self.kl_weight = cfg.kl_weight
        self.balance_weight = cfg.balance_weight

    def __call__(self, batch, ctx):
        b, L = batch.valid.shape
        flat_valid = batch.valid.reshape(-1)
        trace = ctx.trace
        routing, kl_terms, balance_terms = {}, [], []
        streams = {}
        for m in MODALITIES:
            x = T.Tensor(np.ascontiguousarray(batch.features[m], dtype=self.dtype).reshape(b * L, -1))
            if self.use_moe:
                z, decision, aux = self.encoders[m](x, ctx, flat_valid)
                routing[m] = decision
                if self.kl_weight:
                    kl_terms.extend(_valid_latents(aux["latents"], flat_valid))
                if self.balance_weight:
                    balance_terms.append(load_balance_loss(decision, aux["probs"], flat_valid))
            else:
                z = self.encoders[m](x)
            z = z.reshape(b, L, -1)
            steps = [] if trace is not None else None
            u = self.reasoners[m](z, batch.valid, steps)
            if trace is not None:
                trace.setdefault("reasoning", {})[m] = steps
            if self.to_model:
                u = self.to_model[m](u)
            streams[m] = u
        fusion_trace = {} if trace is not None else None
        h = self.fusion(streams, ctx, batch.valid, fusion_trace)
        if trace is not None:
            trace["fusion"] = fusion_trace
        logits = self.classifier.logits(h["text"], h["audio"], h["visual"])
        out = ModelOutput(logits, routing, trace=trace)
        if kl_terms:
            out.kl = _mean_kl(kl_terms)
        if balance_terms:
            out.balance = sum(balance_terms[1:], balance_terms[0]) * (1.0 / len(balance_terms))
        return out


def _valid_latents(latents, valid):
    out = []
    for rows, mu, sigma in latents:
        keep = np.flatnonzero(valid[rows])
        if keep.size:
            out.append((mu[keep], sigma[keep]))
    return out


def _mean_kl(terms):
    total = sum(mu.size for mu, _ in terms)
    acc = None
    for mu, sigma in terms:
        part = kl_regularizer(mu, sigma) * (mu.size / total)
        acc = part if acc is None else acc + part
    return acc
