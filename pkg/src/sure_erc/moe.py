"""Uncertainty-aware mixture of Gaussian experts for one modality.

Each expert maps a feature vector to a diagonal Gaussian (mean head and
variance head, two independent affine maps). The gate scores experts with
softmax(Linear(x) - lambda * mean(sigma^2)), keeps the top k scores and
mixes the selected experts' latents with those scores as weights.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Linear, Module

SIGMA_FLOOR = 1e-4


@dataclass
class GaussianLatent:
    mu: T.Tensor
    sigma: T.Tensor
    z: T.Tensor


@dataclass
class RoutingDecision:
    """Routing for a batch of rows. Arrays are [n, N] unless noted."""

    gate_scores: np.ndarray  # softmax values, zero outside the selection
    selected: np.ndarray  # [n, k] expert ids, best first
    uncertainty: np.ndarray  # mean(sigma^2) per expert
    probs: np.ndarray  # full softmax before truncation


def positive_scale(pre):
    """softplus(pre) + floor; strictly positive for any finite input."""
    return T.softplus(pre) + SIGMA_FLOOR


def reparameterize(mu, sigma, ctx):
    """z = mu + eps * sigma with eps ~ N(0, I) when training, z = mu otherwise."""
    if not ctx.training:
        return mu
    eps = ctx.rng.normal(mu.shape, dtype=mu.dtype)
    return mu + T.Tensor(eps) * sigma


def topk_gate(logits, uncertainty, k, uncertainty_weight=1.0, renormalize=False):
    """Top-k truncated softmax over uncertainty-penalized logits.

    ``logits`` and ``uncertainty`` are [n, N] tensors. The selection is a
    constant mask, so gradients pass straight through the kept scores and are
    zero elsewhere. Ties are broken towards the lower expert index.
    """
    n_exp = logits.shape[-1]
    if not 1 <= k <= n_exp:
        raise ShapeError(f"top-k needs 1 <= k <= {n_exp}, got k={k}")
    penalized = logits - uncertainty * uncertainty_weight if uncertainty_weight else logits
    probs = T.softmax(penalized, axis=-1)
    # rank on the logits: softmax can round near-equal entries into ties
    order = np.argsort(-penalized.data, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(probs.shape, dtype=probs.dtype)
    np.put_along_axis(mask, order, 1.0, axis=-1)
    gates = probs * T.Tensor(mask)
    if renormalize:
        gates = gates / gates.sum(axis=-1, keepdims=True)
    return gates, order, probs


def kl_regularizer(mu, sigma):
    """Mean KL(N(mu, sigma^2) || N(0, 1)) per latent coordinate."""
    var = T.square(sigma)
    return T.mean(T.square(mu) + var - T.log(var) - 1.0) * 0.5


class Expert(Module):
    def __init__(self, d_in, d_z, rng, dtype):
        self.mean_head = Linear(d_in, d_z, rng, dtype)
        self.scale_head = Linear(d_in, d_z, rng, dtype)

    def __call__(self, x, ctx):
        mu = self.mean_head(x)
        sigma = positive_scale(self.scale_head(x))
        _check_finite(mu, sigma, self)
        return GaussianLatent(mu, sigma, reparameterize(mu, sigma, ctx))


def _check_finite(mu, sigma, where):
    if not (np.isfinite(mu.data).all() and np.isfinite(sigma.data).all()):
        raise ShapeError(f"non-finite expert activations in {where}")


class UncertaintyMoE(Module):
    def __init__(self, d_in, d_z, rng, num_experts=4, k=3, uncertainty_weight=1.0,
                 renormalize=False, dtype=np.float32):
        if not 1 <= k <= num_experts:
            raise ShapeError(f"top-k needs 1 <= k <= {num_experts}, got k={k}")
        self.experts = [Expert(d_in, d_z, rng, dtype) for _ in range(num_experts)]
        self.gate = Linear(d_in, num_experts, rng, dtype)
        self.k = k
        self.uncertainty_weight = uncertainty_weight
        self.renormalize = renormalize
        self.d_z = d_z

    @property
    def num_experts(self):
        return len(self.experts)

    def scales(self, x):
        """Variance heads of all experts, densely: [n, N, d_z]."""
        w = T.concat([e.scale_head.weight for e in self.experts], axis=-1)
        b = T.concat([e.scale_head.bias for e in self.experts], axis=-1)
        sigma = positive_scale(T.linear(x, w, b))
        return sigma.reshape(x.shape[0], self.num_experts, self.d_z)

    def route(self, x, sigma):
        uncertainty = T.square(sigma).mean(axis=-1)
        gates, order, probs = topk_gate(self.gate(x), uncertainty, self.k,
                                        self.uncertainty_weight, self.renormalize)
        decision = RoutingDecision(gates.data, order, uncertainty.data, probs.data)
        return gates, probs, decision

    def __call__(self, x, ctx, valid=None):
        """Mix the selected experts for each row of ``x`` [n, d_in].

        Returns ``(z, decision, aux)``; ``aux`` holds the selected latents as
        (rows, mu, sigma) and the full softmax for the optional regularizers.
        Only the selected experts' mean heads are evaluated.
        """
        if x.ndim != 2:
            raise ShapeError(f"MoE expects [n, d_in] rows, got {x.shape}")
        n = x.shape[0]
        sigma_all = self.scales(x)
        gates, probs, decision = self.route(x, sigma_all)
        out = None
        latents = []
        for j, expert in enumerate(self.experts):
            rows = np.flatnonzero((decision.selected == j).any(axis=-1))
            if rows.size == 0:
                continue
            mu = expert.mean_head(x[rows])
            sigma = sigma_all[rows, j]
            _check_finite(mu, sigma, f"expert {j}")
            z = reparameterize(mu, sigma, ctx)
            latents.append((rows, mu, sigma))
            part = T.scatter_rows(gates[rows, j:j + 1] * z, rows, n)
            out = part if out is None else out + part
        aux = {"latents": latents, "probs": probs, "valid": valid}
        return out, decision, aux

    def dense_reference(self, x, ctx):
        """Evaluate every expert and mix with the masked gate; for checking the sparse path."""
        sigma_all = self.scales(x)
        gates, _, decision = self.route(x, sigma_all)
        out = None
        for j, expert in enumerate(self.experts):
            lat = expert(x, ctx)
            part = gates[:, j:j + 1] * lat.z
            out = part if out is None else out + part
        return out, decision


def load_balance_loss(decision, probs, valid=None):
    """Switch-style balance term N * sum_j f_j * P_j over valid rows."""
    p = probs
    sel = decision.selected
    if valid is not None:
        rows = np.flatnonzero(valid)
        p = p[rows]
        sel = sel[rows]
    n_exp = probs.shape[-1]
    frac = np.bincount(sel.ravel(), minlength=n_exp) / max(sel.size, 1)
    return (p.mean(axis=0) * T.Tensor(frac.astype(probs.dtype))).sum() * float(n_exp)


def routing_statistics(decision, valid=None):
    sel, unc = decision.selected, decision.uncertainty
    if valid is not None:
        rows = np.flatnonzero(valid)
        sel, unc = sel[rows], unc[rows]
    n_exp = unc.shape[-1]
    return {
        "selection_counts": np.bincount(sel.ravel(), minlength=n_exp).tolist(),
        "mean_uncertainty": (unc.mean(axis=0) if len(unc) else np.zeros(n_exp)).tolist(),
        "rows": int(len(sel)),
    }
