"""Command-line entry point: ``sure-erc <command> [options] [--key=value ...]``.

Every RunConfig field can be overridden with ``--field=value`` after the
named options. Reports go to JSONL files; tables go to stdout. Contract
violations exit with the category code of the raised error.
"""
import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import harness
from .checks import run_all
from .data import CORPUS_SIZES, SyntheticSpec, generate_synthetic, load_dataset, mimic_corpus, save_dataset
from .errors import CheckFailed, ConfigError, SureError
from .harness import Checkpoint, RunConfig


def _split_overrides(extra):
    """``['--lr=0.1', '--dropout=0']`` -> ``{'lr': '0.1', 'dropout': '0'}``."""
    out = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"unrecognized argument {arg!r}; overrides take the form --key=value")
        key, value = arg[2:].split("=", 1)
        out[key.replace("-", "_")] = value
    return out


def _config(args, overrides):
    if args.profile and args.config:
        raise ConfigError("give --config or --profile, not both")
    if args.config:
        cfg = harness.load_config(args.config)
    elif args.profile:
        cfg = RunConfig.from_profile(args.profile)
    else:
        cfg = RunConfig()
    cfg = harness.apply_overrides(cfg, overrides)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.validate()


def _write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _metrics_table(report, names=None):
    lines = [f"accuracy     {100 * report.accuracy:6.2f}", f"weighted F1  {100 * report.weighted_f1:6.2f}",
             f"{'class':<12} {'prec':>6} {'rec':>6} {'f1':>6} {'support':>8}"]
    for c in report.per_class:
        name = names[c.label] if names else str(c.label)
        lines.append(f"{name:<12} {100 * c.precision:6.2f} {100 * c.recall:6.2f} {100 * c.f1:6.2f} {c.support:8d}")
    return "\n".join(lines)


def cmd_train(args, overrides):
    cfg = _config(args, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    splits = harness.resolve_data(cfg)
    print(f"{'epoch':>5} {'loss':>9} {'val acc':>8} {'val wF1':>8}")

    def progress(e):
        acc = e.get("val_accuracy")
        f1 = e.get("val_weighted_f1")
        acc = "-" if acc is None else f"{100 * acc:.2f}"
        f1 = "-" if f1 is None else f"{100 * f1:.2f}"
        print(f"{e['epoch']:5d} {e['train_loss']:9.4f} {acc:>8} {f1:>8}", flush=True)

    ckpt, log = harness.train(cfg, splits, progress if not args.quiet else None)
    ckpt.save(out / "checkpoint.npz")
    _write_jsonl(out / "train_log.jsonl", log.entries)
    held_out = splits.test or splits.val
    if held_out:
        report = harness.evaluate(ckpt, held_out)
        _write_jsonl(out / "metrics.jsonl", [{"split": "test" if splits.test else "val", "epoch": ckpt.epoch,
                                               **report.to_dict()}])
        print(f"best epoch {ckpt.epoch}")
        print(_metrics_table(report, splits.header.label_names))
    return 0


def _eval_data(ckpt, args):
    if args.data:
        header, dialogues = load_dataset(args.data)
        return header, dialogues
    splits = harness.resolve_data(ckpt.config)
    chosen = getattr(splits, args.split)
    if not chosen:
        raise ConfigError(f"checkpoint config yields an empty {args.split} split; pass --data")
    return splits.header, chosen


def cmd_eval(args, overrides):
    if overrides:
        raise ConfigError("eval takes no config overrides")
    ckpt = Checkpoint.load(args.checkpoint)
    header, dialogues = _eval_data(ckpt, args)
    report = harness.evaluate(ckpt, dialogues, header)
    if args.out:
        _write_jsonl(args.out, [{"checkpoint": str(args.checkpoint), **report.to_dict()}])
    print(_metrics_table(report, header.label_names))
    return 0


def cmd_ablate(args, overrides):
    cfg = _config(args, overrides)

    def progress(row):
        s = row.summary
        print(f"done {row.variant}: acc {100 * s['accuracy']:.2f} w-F1 {100 * s['weighted_f1']:.2f}", flush=True)

    rows = harness.ablate(cfg, progress=None if args.quiet else progress)
    if args.out:
        _write_jsonl(args.out, [r.to_dict() for r in rows])
    print(harness.format_table(rows))
    return 0


def cmd_inspect(args, overrides):
    if overrides:
        raise ConfigError("inspect takes no config overrides")
    ckpt = Checkpoint.load(args.checkpoint)
    header, dialogues = _eval_data(ckpt, args)
    harness.check_dims(ckpt.header, header, "dataset")
    if args.limit is not None:
        dialogues = dialogues[:args.limit]
    records = harness.inspect(ckpt, dialogues)
    if args.out:
        _write_jsonl(args.out, records)
    print(f"{'utt_id':<16} {'gold':>4} {'pred':>4}  max gate t/a/v")
    for rec in records:
        for u in rec["utterances"]:
            gates = "/".join(f"{max(u['fusion_gate'][m]):.2f}" for m in ("text", "audio", "visual"))
            print(f"{u['utt_id']:<16} {u['label']:>4} {u['prediction']:>4}  {gates}")
    return 0


def _synthetic_overrides(overrides):
    known = {f.name for f in fields(SyntheticSpec)}
    spec = {}
    for key, text in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown synthetic field {key!r}; choose from {sorted(known)}")
        try:
            spec[key] = json.loads(text)
        except json.JSONDecodeError:
            spec[key] = text
    if "signal_modalities" in spec:
        value = spec["signal_modalities"]
        spec["signal_modalities"] = tuple(value.split(",") if isinstance(value, str) else value)
    return spec


def cmd_gen_data(args, overrides):
    if args.mimic:
        if overrides:
            raise ConfigError("--mimic takes no synthetic overrides")
        header, dialogues = mimic_corpus(args.mimic, args.split, seed=args.seed)
    else:
        spec = _synthetic_overrides(overrides)
        spec.setdefault("seed", args.seed)
        try:
            header, dialogues, _ = generate_synthetic(SyntheticSpec(**spec))
        except TypeError as e:
            raise ConfigError(f"bad synthetic spec: {e}") from None
    save_dataset(args.out, header, dialogues)
    n_utts = sum(len(d) for d in dialogues)
    print(f"wrote {args.out}: {len(dialogues)} dialogues, {n_utts} utterances, {header.num_labels} labels")
    return 0


def cmd_check(args, overrides):
    if overrides:
        raise ConfigError("check takes no config overrides")
    results = run_all(max_entries=args.max_entries)
    if args.out:
        _write_jsonl(args.out, [r.__dict__ for r in results])
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailed("failed: " + ", ".join(failed))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="sure-erc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_opts(p):
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--profile", choices=sorted(harness.PROFILES))
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("train", help="train one model and save the best checkpoint")
    config_opts(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "metrics of a checkpoint"),
                              ("inspect", cmd_inspect, "dump routing, retrieval and gate weights")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="dataset file; default: a split of the checkpoint's own data")
        p.add_argument("--split", choices=("train", "val", "test"), default="test")
        p.add_argument("--out", help="JSONL report path")
        if name == "inspect":
            p.add_argument("--limit", type=int, help="first N dialogues only")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="train and test the variant grid")
    config_opts(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="JSONL report path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="write a synthetic dataset; --key=value sets synthetic fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mimic", choices=sorted(CORPUS_SIZES), help="reproduce a corpus split's counts")
    p.add_argument("--split", default="test", help="corpus split for --mimic")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--max-entries", type=int, default=24,
                   help="parameter entries probed per tensor by the gradient check")
    p.add_argument("--out", help="JSONL report path")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, _split_overrides(extra))
    except SureError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
