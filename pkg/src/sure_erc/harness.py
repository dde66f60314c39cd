"""Training, evaluation, ablation and inspection driver."""
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .classifier import cross_entropy, inverse_frequency_weights, predict
from .data import (MODALITIES, DatasetHeader, SyntheticSpec, collate, generate_synthetic,
                   load_dataset, mask_modalities, split_dataset)
from .errors import ConfigError, DatasetError, TrainingDiverged
from .metrics import average_reports, compute_metrics
from .model import SureModel
from .moe import routing_statistics
from .nn import Context
from .optim import AdamW
from .rng import Rng

logger = logging.getLogger(__name__)

PROFILES = {
    "iemocap": {"lr": 1e-4, "batch_size": 16, "epochs": 150},
    "meld": {"lr": 5e-6, "batch_size": 32, "epochs": 50},
    # small widths for CPU runs on synthetic data
    "desk": {"d_z": 32, "d_q": 32, "d": 32, "d_ff": 128, "lr": 2e-3, "batch_size": 8, "epochs": 100},
}


@dataclass
class RunConfig:
    # data: explicit files, or a synthetic spec; a single source is split by `split`
    train_path: str = None
    val_path: str = None
    test_path: str = None
    synthetic: dict = None
    split: tuple = (0.8, 0.1, 0.1)
    # architecture
    d_z: int = 128
    d_q: int = 128
    d: int = 128
    d_ff: int = 512
    num_experts: int = 4
    top_k: int = 3
    uncertainty_weight: float = 1.0
    renormalize_gates: bool = False
    kl_weight: float = 0.0
    balance_weight: float = 0.0
    iterations: int = 3
    heads: int = 4
    dropout: float = 0.5
    gate_mode: str = "softmax"
    positional: bool = False
    # optimization
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 150
    class_weighting: bool = False
    seed: int = 0
    precision: str = "float32"
    runs: int = 1
    # ablations
    disable_moe: bool = False
    disable_reasoning: bool = False
    keep_modalities: tuple = MODALITIES

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        self.keep_modalities = tuple(self.keep_modalities)

    def validate(self):
        errors = []
        if not 1 <= self.top_k <= self.num_experts:
            errors.append(f"top_k={self.top_k} must lie in [1, num_experts={self.num_experts}]")
        if not 0.0 <= self.dropout < 1.0:
            errors.append(f"dropout={self.dropout} must lie in [0, 1)")
        if not self.lr > 0:
            errors.append(f"lr={self.lr} must be > 0")
        for name in ("d_z", "d_q", "d", "d_ff", "heads", "batch_size", "runs"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.epochs < 0 or self.iterations < 0:
            errors.append("epochs and iterations must be >= 0")
        if self.d % self.heads:
            errors.append(f"d={self.d} must be divisible by heads={self.heads}")
        if self.d_ff < self.d:
            errors.append(f"d_ff={self.d_ff} must be >= d={self.d}")
        if self.precision not in ("float32", "float64"):
            errors.append(f"precision must be float32 or float64, got {self.precision!r}")
        if self.gate_mode not in ("softmax", "sigmoid"):
            errors.append(f"gate_mode must be softmax or sigmoid, got {self.gate_mode!r}")
        if not self.keep_modalities or not set(self.keep_modalities) <= set(MODALITIES):
            errors.append(f"keep_modalities must be a non-empty subset of {MODALITIES}")
        if self.train_path is None and self.synthetic is None:
            errors.append("give train_path or a synthetic spec")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        d["keep_modalities"] = list(self.keep_modalities)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        profile = d.pop("profile", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if profile and profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        base = dict(PROFILES[profile]) if profile else {}
        base.update(d)
        return cls(**base)

    @classmethod
    def from_profile(cls, profile, **overrides):
        return cls.from_dict({"profile": profile, **overrides})

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_config(path):
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(raw)


def coerce_override(name, text):
    """Parse a ``--key=value`` string into the type of RunConfig field ``name``."""
    types = {f.name: f for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    default = types[name].default
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p for p in text.split(",") if p]
            return tuple(float(p) for p in parts) if name == "split" else tuple(parts)
        if name == "synthetic":
            return json.loads(text)
        return None if text.lower() in ("none", "null", "") else text
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(f"cannot parse {name}={text!r}") from None


def apply_overrides(config, overrides):
    changes = {k: coerce_override(k, v) for k, v in overrides.items()}
    return config.replace(**changes)


# -- data ------------------------------------------------------------------------

@dataclass
class Splits:
    header: DatasetHeader
    train: list
    val: list
    test: list


def _synthetic_spec(d, seed):
    d = dict(d)
    d.setdefault("seed", seed)
    if "signal_modalities" in d:
        d["signal_modalities"] = tuple(d["signal_modalities"])
    try:
        return SyntheticSpec(**d)
    except TypeError as e:
        raise ConfigError(f"bad synthetic spec: {e}") from None


def resolve_data(config):
    if config.synthetic is not None:
        header, dialogues, _ = generate_synthetic(_synthetic_spec(config.synthetic, config.seed))
        pool = dialogues
    else:
        header, pool = load_dataset(config.train_path)
    val = test = []
    if config.val_path:
        vh, val = load_dataset(config.val_path)
        check_dims(header, vh, config.val_path)
    if config.test_path:
        th, test = load_dataset(config.test_path)
        check_dims(header, th, config.test_path)
    if config.synthetic is not None or (not config.val_path and not config.test_path):
        fr = list(config.split)
        if len(fr) == 1:
            train = pool
        else:
            parts = split_dataset(pool, fr, config.seed)
            train = parts[0]
            val = parts[1] if not config.val_path else val
            test = parts[2] if len(parts) > 2 and not config.test_path else test
    else:
        train = pool
    keep = config.keep_modalities
    if set(keep) != set(MODALITIES):
        train, val, test = (mask_modalities(s, keep) if s else s for s in (train, val, test))
    return Splits(header, train, val, test)


def check_dims(expected, got, where):
    bad = [f"dims.{m}: expected {expected.dims[m]}, got {got.dims[m]}"
           for m in MODALITIES if expected.dims[m] != got.dims[m]]
    if expected.num_labels != got.num_labels:
        bad.append(f"num_labels: expected {expected.num_labels}, got {got.num_labels}")
    if bad:
        raise ConfigError(f"{where}: " + "; ".join(bad))


# -- checkpoint --------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict
    config: RunConfig
    header: DatasetHeader
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    optimizer: dict = None

    def build_model(self):
        model = SureModel(self.header.dims, self.header.num_labels, self.config, Rng(self.config.seed))
        model.load_state_dict(self.params)
        return model

    def save(self, path):
        meta = {"config": self.config.to_dict(), "header": self.header.to_dict(),
                "epoch": self.epoch, "rng_state": self.rng_state,
                "optimizer_step": None if self.optimizer is None else self.optimizer["step"]}
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        if self.optimizer is not None:
            names = list(self.params)
            for name, m, v in zip(names, self.optimizer["m"], self.optimizer["v"]):
                arrays[f"adam_m/{name}"] = m
                arrays[f"adam_v/{name}"] = v
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(str(z["meta"]))
                params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
                optimizer = None
                if meta.get("optimizer_step") is not None:
                    optimizer = {"step": meta["optimizer_step"],
                                 "m": [z[f"adam_m/{k}"] for k in params],
                                 "v": [z[f"adam_v/{k}"] for k in params]}
        except FileNotFoundError:
            raise ConfigError(f"checkpoint not found: {path}") from None
        h = meta["header"]
        header = DatasetHeader(h["num_labels"], h["label_names"], h["dims"], h["schema_version"])
        return cls(params, RunConfig.from_dict(meta["config"]), header, meta["epoch"],
                   meta["rng_state"], optimizer)


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    best_epoch: int = 0

    def to_lines(self):
        return [json.dumps(e) for e in self.entries]


# -- loops ---------------------------------------------------------------------------

def build_model(config, header, rng):
    return SureModel(header.dims, header.num_labels, config, rng)


def _batches(dialogues, size):
    for i in range(0, len(dialogues), size):
        yield dialogues[i:i + size]


def predict_dialogues(model, dialogues, batch_size=16, trace=False):
    """Eval-mode predictions. Returns a list of (dialogue, probs [n, K], trace or None)."""
    out = []
    with T.no_grad():
        for chunk in _batches(dialogues, batch_size):
            batch = collate(chunk, model.dims, model.dtype)
            ctx = Context(training=False, trace={} if trace else None)
            res = model(batch, ctx)
            probs = T.softmax(res.logits, axis=-1).data
            for i, d in enumerate(chunk):
                out.append((d, probs[i, :len(d)], (res, batch, i) if trace else None))
    return out


def evaluate_model(model, dialogues, batch_size=16):
    preds, gold = [], []
    for d, probs, _ in predict_dialogues(model, dialogues, batch_size):
        preds.append(predict(probs))
        gold.append(d.labels())
    return compute_metrics(np.concatenate(preds), np.concatenate(gold), model.num_labels)


def evaluate(checkpoint, dialogues, header=None):
    """Eval-mode metrics of ``checkpoint`` on ``dialogues``."""
    if header is not None:
        check_dims(checkpoint.header, header, "dataset")
    for d in dialogues[:1]:
        for m in MODALITIES:
            if d.utterances[0].feature(m).shape[0] != checkpoint.header.dims[m]:
                raise ConfigError(f"dims.{m}: checkpoint expects {checkpoint.header.dims[m]}, "
                                  f"data has {d.utterances[0].feature(m).shape[0]}")
    with T.precision(checkpoint.config.precision):
        model = checkpoint.build_model()
        return evaluate_model(model, dialogues, checkpoint.config.batch_size)


def _aggregate_routing(per_batch):
    out = {}
    for stats in per_batch:
        for m, s in stats.items():
            agg = out.setdefault(m, {"selection_counts": np.zeros(len(s["selection_counts"]), dtype=np.int64),
                                     "uncertainty_sum": np.zeros(len(s["mean_uncertainty"])), "rows": 0})
            agg["selection_counts"] += s["selection_counts"]
            agg["uncertainty_sum"] += np.asarray(s["mean_uncertainty"]) * s["rows"]
            agg["rows"] += s["rows"]
    return {m: {"selection_counts": a["selection_counts"].tolist(),
                "mean_uncertainty": (a["uncertainty_sum"] / max(a["rows"], 1)).tolist()}
            for m, a in out.items()}


def train(config, data=None, progress=None):
    """Train from scratch. Returns ``(best_checkpoint, log)``.

    ``data`` may pass pre-resolved :class:`Splits`; otherwise they come from
    the config. Model selection uses validation weighted F1 when a validation
    split exists, else the last epoch.
    """
    config.validate()
    with T.precision(config.precision):
        splits = data if data is not None else resolve_data(config)
        if not splits.train:
            raise DatasetError("training split is empty")
        master = Rng(config.seed)
        init_rng, order_rng, noise_rng = master.child(0), master.child(1), master.child(2)
        model = build_model(config, splits.header, init_rng)
        opt = AdamW(model.parameters(), config.lr, (config.beta1, config.beta2), config.adam_eps,
                    config.weight_decay)
        class_weights = None
        if config.class_weighting:
            labels = np.concatenate([d.labels() for d in splits.train])
            class_weights = inverse_frequency_weights(labels, splits.header.num_labels)

        def snapshot(epoch):
            return Checkpoint(model.state_dict(), config, splits.header, epoch,
                              {"order": order_rng.get_state(), "noise": noise_rng.get_state()},
                              opt.state_dict())

        best = snapshot(0)
        best_score = -math.inf
        log = TrainLog()
        step = 0
        for epoch in range(1, config.epochs + 1):
            order = order_rng.permutation(len(splits.train))
            shuffled = [splits.train[i] for i in order]
            losses, weights, routing = [], [], []
            for chunk in _batches(shuffled, config.batch_size):
                step += 1
                batch = collate(chunk, splits.header.dims, model.dtype)
                out = model(batch, Context(training=True, rng=noise_rng))
                loss = cross_entropy(out.logits, batch.labels, batch.valid, class_weights)
                if out.kl is not None:
                    loss = loss + out.kl * config.kl_weight
                if out.balance is not None:
                    loss = loss + out.balance * config.balance_weight
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, step, value)
                opt.zero_grad()
                loss.backward()
                opt.step()
                n = int(batch.valid.sum())
                losses.append(value * n)
                weights.append(n)
                flat = batch.valid.reshape(-1)
                routing.append({m: routing_statistics(dec, flat) for m, dec in out.routing.items()})
            entry = {"epoch": epoch, "train_loss": float(sum(losses) / sum(weights)),
                     "routing": _aggregate_routing(routing)}
            if splits.val:
                rep = evaluate_model(model, splits.val, config.batch_size)
                entry["val_accuracy"] = rep.accuracy
                entry["val_weighted_f1"] = rep.weighted_f1
                score = rep.weighted_f1
            else:
                score = epoch
            log.entries.append(entry)
            if score > best_score:
                best_score = score
                best = snapshot(epoch)
                log.best_epoch = epoch
            if progress is not None:
                progress(entry)
        return best, log


# -- ablation ----------------------------------------------------------------------

ABLATION_GRID = (
    ("full", {}),
    ("w/o MoE", {"disable_moe": True}),
    ("w/o Reasoning", {"disable_reasoning": True}),
    ("text", {"keep_modalities": ("text",)}),
    ("audio", {"keep_modalities": ("audio",)}),
    ("visual", {"keep_modalities": ("visual",)}),
    ("text+audio", {"keep_modalities": ("text", "audio")}),
    ("text+visual", {"keep_modalities": ("text", "visual")}),
    ("visual+audio", {"keep_modalities": ("visual", "audio")}),
)


@dataclass
class AblationRow:
    variant: str
    reports: list
    num_parameters: int

    @property
    def summary(self):
        return average_reports(self.reports)

    def to_dict(self):
        return {"variant": self.variant, "num_parameters": self.num_parameters, **self.summary,
                "reports": [r.to_dict() for r in self.reports]}


def run_seeds(seed, runs):
    """Per-run seeds drawn from one master seed (varies init, data order and noise)."""
    if runs == 1:
        return [seed]
    return [int(s) for s in Rng(seed, 7).integers(0, 2**31 - 1, runs)]


def ablate(config, grid=ABLATION_GRID, progress=None):
    """Train and test every variant of ``grid``; returns one row per variant.

    The split is fixed by the base seed; each run varies initialization,
    data order and sampling noise.
    """
    config.validate()
    rows = []
    for name, change in grid:
        variant = config.replace(**change)
        reports, n_params = [], 0
        for seed in run_seeds(config.seed, config.runs):
            run_cfg = variant.replace(seed=seed)
            with T.precision(run_cfg.precision):
                splits = resolve_data(variant)
                ckpt, _ = train(run_cfg, splits)
                held_out = splits.test or splits.val or splits.train
                reports.append(evaluate(ckpt, held_out))
                n_params = ckpt.build_model().num_parameters()
        row = AblationRow(name, reports, n_params)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def format_table(rows):
    lines = [f"{'variant':<15} {'acc':>7} {'w-F1':>7} {'params':>9}"]
    for r in rows:
        s = r.summary
        lines.append(f"{r.variant:<15} {100 * s['accuracy']:7.2f} {100 * s['weighted_f1']:7.2f} "
                     f"{r.num_parameters:9d}")
    return "\n".join(lines)


# -- inspection ---------------------------------------------------------------------

def inspect(checkpoint, dialogues):
    """Per-utterance routing, retrieval weights and fusion-gate weights.

    Returns one dict per dialogue, ready to serialize as a JSON line.
    """
    with T.precision(checkpoint.config.precision):
        model = checkpoint.build_model()
        records = []
        for d, probs, (res, batch, i) in predict_dialogues(model, dialogues, checkpoint.config.batch_size,
                                                           trace=True):
            L = batch.valid.shape[1]
            n = len(d)
            utts = []
            for j, u in enumerate(d.utterances):
                row = i * L + j
                rec = {"utt_id": u.utt_id, "label": u.label, "prediction": int(predict(probs[j])),
                       "probs": probs[j].tolist(), "routing": {}, "retrieval": {}, "fusion_gate": {}}
                for m in MODALITIES:
                    if m in res.routing:
                        dec = res.routing[m]
                        rec["routing"][m] = {"experts": dec.selected[row].tolist(),
                                             "gate_scores": dec.gate_scores[row].tolist(),
                                             "uncertainty": dec.uncertainty[row].tolist()}
                    steps = res.trace["reasoning"][m]
                    rec["retrieval"][m] = [w[i, j, :n].tolist() for w in steps]
                    rec["fusion_gate"][m] = res.trace["fusion"][m]["gate"][i, j].tolist()
                utts.append(rec)
            records.append({"dialogue_id": d.dialogue_id, "utterances": utts})
        return records
