"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from sure_erc import harness
from sure_erc import tensor as T
from sure_erc.checks import check_gradients, check_metrics, check_normalization, check_routing
from sure_erc.data import count_utterances, load_dataset, mimic_corpus, save_dataset
from sure_erc.errors import DatasetError
from sure_erc.harness import Checkpoint, RunConfig
from sure_erc.moe import Expert
from sure_erc.nn import Context
from sure_erc.rng import Rng

pytestmark = pytest.mark.acceptance


def test_1_gradient_integrity(verdict):
    # every parameter tensor is probed at up to 24 seeded entries to fit the time budget
    t = time.perf_counter()
    res = check_gradients(max_entries=24)
    elapsed = time.perf_counter() - t
    ok = res.value < 1e-4 and elapsed < 60
    verdict(1, ok, f"max rel err {res.value:.3g} (< 1e-4), {elapsed:.1f}s (< 60s); {res.detail}")
    assert res.value < 1e-4, res.line()
    assert elapsed < 60


def test_2_routing_invariants(verdict):
    res = check_routing(samples=10_000)
    verdict(2, res.passed, f"gate deviation {res.value:.3g} (<= 1e-6); {res.detail}")
    assert res.passed, res.line()


def test_3_reparameterization_statistics(verdict):
    n = 100_000
    with T.precision("float64"):
        expert = Expert(6, 4, Rng(0), np.float64)
        x = T.Tensor(np.tile(Rng(1).normal((1, 6)), (n, 1)))
        lat = expert(x, Context(training=True, rng=Rng(2)))
        ev = expert(x[:1], Context(training=False))
    mu, sigma, z = lat.mu.data[0], lat.sigma.data[0], lat.z.data
    mean_dev = np.abs(z.mean(0) - mu) / (sigma / math.sqrt(n))
    var_dev = np.abs(z.var(0) / sigma ** 2 - 1)
    exact = np.array_equal(ev.z.data, ev.mu.data)
    ok = (mean_dev <= 4).all() and (var_dev <= 0.1).all() and exact
    verdict(3, ok, f"mean dev {mean_dev.max():.2f} sigma/sqrt(n) (<= 4), var dev {var_dev.max():.3f} (<= 0.1), "
                   f"eval z == mu: {exact}")
    assert ok


def test_4_normalization_invariants(verdict):
    res = check_normalization()
    verdict(4, res.passed, f"max |sum - 1| {res.value:.3g} (<= 1e-6) over {res.detail}")
    assert res.passed, res.line()


def test_5_metric_oracle(verdict):
    res = check_metrics(cases=1000)
    verdict(5, res.passed, f"max |delta| {res.value:.3g} (< 1e-9) incl. 11/15 hand example")
    assert res.passed, res.line()


def test_6_learnability(verdict):
    t = time.perf_counter()
    cfg = RunConfig.from_profile("desk", synthetic={"seed": 0}, seed=0)
    assert (cfg.d, cfg.epochs) == (32, 100)
    splits = harness.resolve_data(cfg)
    band = []
    for seed in range(10):
        with T.precision(cfg.precision):
            model = harness.build_model(cfg, splits.header, Rng(seed).child(0))
        band.append(harness.evaluate_model(model, splits.test).accuracy)
    ckpt, _ = harness.train(cfg, splits)
    train_acc = harness.evaluate(ckpt, splits.train).accuracy
    test_acc = harness.evaluate(ckpt, splits.test).accuracy
    elapsed = time.perf_counter() - t
    ok = train_acc >= 0.95 and test_acc > max(band) and elapsed < 600
    verdict(6, ok, f"train acc {train_acc:.3f} (>= 0.95), held-out {test_acc:.3f} vs chance band "
                   f"[{min(band):.3f}, {max(band):.3f}], best epoch {ckpt.epoch}, {elapsed:.0f}s (< 600s)")
    assert ok


def test_7_ablation_directionality(verdict):
    cfg = RunConfig.from_profile("desk", synthetic={"seed": 0, "signal_modalities": ["text"]}, seed=0)
    grid = [row for row in harness.ABLATION_GRID if row[0] in ("full", "text", "audio", "visual")]
    rows = {r.variant: r.summary["weighted_f1"] for r in harness.ablate(cfg, grid)}
    ok = rows["text"] >= rows["audio"] and rows["text"] >= rows["visual"] and \
        rows["full"] >= max(rows["text"], rows["audio"], rows["visual"])
    verdict(7, ok, "weighted F1 " + ", ".join(f"{k} {100 * v:.1f}" for k, v in rows.items()))
    assert ok


def test_8_determinism_and_persistence(verdict, tmp_path):
    cfg = RunConfig(synthetic={"dialogues": 16, "seed": 3}, d_z=16, d_q=16, d=16, d_ff=32, epochs=3,
                    batch_size=4, lr=3e-3, precision="float64", seed=5)
    a, log_a = harness.train(cfg)
    b, log_b = harness.train(cfg)
    same = log_a.entries == log_b.entries and all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    splits = harness.resolve_data(cfg)
    a.save(tmp_path / "a.npz")
    loaded = Checkpoint.load(tmp_path / "a.npz")
    data = splits.train + splits.val + splits.test
    with T.precision("float64"):
        before = harness.predict_dialogues(a.build_model(), data)
        after = harness.predict_dialogues(loaded.build_model(), data)
    kept = all(np.array_equal(p, q) for (_, p, _), (_, q, _) in zip(before, after))
    kept = kept and harness.evaluate(loaded, data) == harness.evaluate(a, data)
    verdict(8, same and kept, f"bit-identical trajectories: {same}; save/load predictions identical: {kept}")
    assert same and kept


def test_9_dataset_contract(verdict, tmp_path):
    counts = {}
    for name in ("iemocap", "meld"):
        d = u = 0
        for split in ("train+val", "test"):
            path = tmp_path / f"{name}-{split}.jsonl"
            save_dataset(path, *mimic_corpus(name, split))
            _, ds = load_dataset(path)
            d, u = d + len(ds), u + count_utterances(ds)
        counts[name] = (d, u)
    counts_ok = counts == {"iemocap": (151, 7433), "meld": (1433, 13708)}
    bad = tmp_path / "bad.jsonl"
    text = (tmp_path / "iemocap-test.jsonl").read_text().splitlines()
    text[3] = text[3].replace('"text": [', '"text": [0.5, ', 1)
    bad.write_text("\n".join(text) + "\n")
    try:
        load_dataset(bad)
        located = False
    except DatasetError as e:
        located = "line 4" in str(e) and "d00002_u000" in str(e)
    verdict(9, counts_ok and located, f"counts {counts}; malformed file error located: {located}")
    assert counts_ok and located
