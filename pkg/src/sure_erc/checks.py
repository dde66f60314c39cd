"""Runtime invariant checks: finite-difference gradients, routing, normalization, metrics.

``run_all`` backs the ``check`` CLI command. Each check returns a
:class:`CheckResult`; none of them raise on failure.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .classifier import cross_entropy
from .data import SyntheticSpec, collate, generate_synthetic
from .harness import RunConfig, build_model
from .metrics import compute_metrics
from .moe import UncertaintyMoE, topk_gate
from .nn import Context
from .rng import Rng


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = float(self.value)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.3g} (threshold {self.threshold:g}) {self.detail}".rstrip()


def finite_difference_check(loss_fn, params, step=1e-5, max_entries=None, seed=0, min_magnitude=0.0):
    """Compare reverse-mode gradients with central differences.

    ``loss_fn`` rebuilds the forward pass and returns a scalar tensor; it must
    be deterministic. ``max_entries`` caps the entries probed per parameter
    (a seeded random subset); ``None`` probes every entry. Entries whose
    central difference is below ``min_magnitude`` are skipped. Returns
    ``(max_relative_error, worst)`` with the error measured as
    |g_ad - g_fd| / (|g_fd| + 1e-8).
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    pick = Rng(seed, 99)
    worst_err, worst = 0.0, None
    with T.no_grad():
        for k, p in enumerate(params):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            flat, gflat = p.data.reshape(-1), g.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(pick.permutation(flat.size)[:max_entries])
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * step)
                if abs(fd) < min_magnitude:
                    continue
                err = abs(gflat[i] - fd) / (abs(fd) + 1e-8)
                if err > worst_err:
                    worst_err, worst = err, (k, int(i), float(gflat[i]), fd)
    return worst_err, worst


def tiny_pipeline(d=8, n_utts=3, seed=0, **overrides):
    """A float64 model and one dialogue for end-to-end gradient checks."""
    spec = SyntheticSpec(num_labels=3, dims={"text": 5, "audio": 4, "visual": 3}, dialogues=1,
                         min_utterances=n_utts, max_utterances=n_utts, noise={"text": 0.5, "audio": 0.5,
                                                                              "visual": 0.5}, seed=seed)
    header, dialogues, _ = generate_synthetic(spec)
    cfg = RunConfig(synthetic={}, d_z=d, d_q=d, d=d, d_ff=4 * d, precision="float64", seed=seed,
                    kl_weight=0.1, balance_weight=0.1).replace(**overrides)
    with T.precision("float64"):
        model = build_model(cfg, header, Rng(seed))
    batch = collate(dialogues, header.dims, np.float64)

    def loss_fn():
        out = model(batch, Context(training=True, rng=Rng(seed, 1)))
        loss = cross_entropy(out.logits, batch.labels, batch.valid)
        if out.kl is not None:
            loss = loss + out.kl * cfg.kl_weight
        if out.balance is not None:
            loss = loss + out.balance * cfg.balance_weight
        return loss

    return model, batch, loss_fn


def check_gradients(max_entries=None):
    t = time.perf_counter()
    with T.precision("float64"):
        model, _, loss_fn = tiny_pipeline()
        err, worst = finite_difference_check(loss_fn, model.parameters(), 1e-5, max_entries)
    names = [n for n, _ in model.named_parameters()]
    where = f"worst at {names[worst[0]]}[{worst[1]}]" if worst else ""
    return CheckResult("gradient integrity (full pipeline, float64)", err < 1e-4, err, 1e-4, where,
                       time.perf_counter() - t)


def check_routing(samples=10_000, seed=0):
    t = time.perf_counter()
    rng = Rng(seed)
    moe = UncertaintyMoE(6, 4, rng, num_experts=4, k=3, dtype=np.float64)
    with T.no_grad(), T.precision("float64"):
        x = T.Tensor(rng.normal((samples, 6)) * 2.0)
        sigma = moe.scales(x)
        gates, probs, dec = moe.route(x, sigma)
    nnz_ok = bool(((dec.gate_scores != 0).sum(axis=1) == moe.k).all())
    kept = np.take_along_axis(dec.gate_scores, dec.selected, axis=1)
    ref = np.take_along_axis(dec.probs, dec.selected, axis=1)
    dev = float(np.abs(kept - ref).max())
    # tied logits: the ordering must follow uncertainty alone
    unc = np.abs(rng.normal((samples, 4))) + 0.01
    with T.no_grad(), T.precision("float64"):
        _, order, _ = topk_gate(T.Tensor(np.zeros((samples, 4))), T.Tensor(unc), 3, 1.0)
    ranked = np.take_along_axis(unc, order, axis=1)
    order_ok = bool((np.diff(ranked, axis=1) >= 0).all())
    passed = nnz_ok and order_ok and dev <= 1e-6
    return CheckResult("routing invariants", passed, dev, 1e-6,
                       f"k-nonzero={nnz_ok} tied-order={order_ok}", time.perf_counter() - t)


def check_normalization(seed=0):
    t = time.perf_counter()
    spec = SyntheticSpec(dialogues=4, seed=seed)
    header, dialogues, _ = generate_synthetic(spec)
    cfg = RunConfig(synthetic={}, d_z=16, d_q=16, d=16, d_ff=64, seed=seed, precision="float64")
    with T.precision("float64"):
        model = build_model(cfg, header, Rng(seed))
        batch = collate(dialogues, header.dims, np.float64)
        with T.record_softmax() as log:
            model(batch, Context(training=True, rng=Rng(seed, 1)))
    worst = 0.0
    for probs, _ in log:
        worst = max(worst, float(np.abs(probs.sum(axis=-1) - 1.0).max()))
    return CheckResult("normalization invariants", worst <= 1e-6, worst, 1e-6,
                       f"{len(log)} softmax maps", time.perf_counter() - t)


def brute_force_metrics(pred, gold, num_labels):
    """Per-class counting by plain loops; independent of :func:`compute_metrics`."""
    n = len(gold)
    correct = sum(1 for p, g in zip(pred, gold) if p == g)
    wf1 = 0.0
    for c in range(num_labels):
        tp = sum(1 for p, g in zip(pred, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gold) if p != c and g == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        wf1 += (tp + fn) / n * f1
    return correct / n, wf1


def check_metrics(cases=1000, seed=0):
    t = time.perf_counter()
    rng = Rng(seed)
    worst = 0.0
    for _ in range(cases):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(1, 60))
        gold = rng.integers(0, k, n)
        pred = rng.integers(0, k, n)
        rep = compute_metrics(pred, gold, k)
        acc, wf1 = brute_force_metrics(pred.tolist(), gold.tolist(), k)
        worst = max(worst, abs(rep.accuracy - acc), abs(rep.weighted_f1 - wf1))
    hand = compute_metrics([0, 1, 1, 1], [0, 0, 1, 1], 2).weighted_f1
    dev = max(worst, abs(hand - 11 / 15))
    return CheckResult("metric oracle", dev < 1e-9, dev, 1e-9, f"{cases} cases", time.perf_counter() - t)


def run_all(max_entries=None):
    return [check_gradients(max_entries), check_routing(), check_normalization(), check_metrics()]
