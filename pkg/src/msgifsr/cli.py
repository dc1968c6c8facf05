"""``msgifsr`` command line: preprocess, synth, train, eval, ablate, sweep, graph, gradcheck.

Exit codes: 0 success, 2 usage/config/input error, 3 state error
(checkpoint or manifest mismatch, diverged training).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import corpus
from .config import ConfigError, config_to_pairs, parse_overrides, read_config_file, write_config_file
from .evaluator import ABLATIONS, ablate, format_kv, format_table, parse_sweep, sweep
from .graph import build_mihsg, dump_graph
from .trainer import CheckpointError, TrainingDiverged, evaluate, grad_check, load_checkpoint, train

EXIT_USAGE = 2
EXIT_STATE = 3
# keys a resolved config.txt carries besides the model/train fields
RUN_KEYS = ("command", "data", "out", "seeds", "variants", "param", "num_items")


class UsageError(Exception):
    pass


def _write_resolved(out: Path, command: str, pairs: dict[str, str]):
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(out / "config.txt", {"command": command, **pairs})


def _load_configs(args):
    """Merge config file then ``--set`` overrides into (model, train, extra)."""
    pairs = {}
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise UsageError(f"config file not found: {args.config}")
        pairs.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return parse_overrides(pairs, extra_keys=RUN_KEYS)


def _data_dir(args, extra):
    data = args.data or extra.get("data")
    if not data:
        raise UsageError("--data is required")
    if not (Path(data) / "vocabulary.tsv").exists():
        raise UsageError(f"not a processed dataset directory: {data}")
    return data


def _seeds(args, extra, default):
    raw = getattr(args, "seeds", None) or extra.get("seeds")
    return [int(s) for s in raw.split(",")] if raw else [default]


def cmd_preprocess(args):
    if not Path(args.input).exists():
        raise UsageError(f"input not found: {args.input}")
    events = corpus.load_events(args.input, args.format)
    sessions = corpus.sessionize(events, args.gap)
    test_keys = None
    if args.split_policy == "provided_split":
        if not args.test_input:
            raise UsageError("--split-policy provided_split needs --test-input")
        test_events = corpus.load_events(args.test_input, args.format)
        test_sessions = corpus.sessionize(test_events, args.gap)
        for s in test_sessions:
            s.key = "test:" + s.key
        test_keys = {s.key for s in test_sessions}
        sessions = sessions + test_sessions
    split = corpus.preprocess(sessions, args.min_session_len, args.min_item_count, args.split_policy,
                              args.test_fraction, args.test_days, test_keys, args.valid_fraction, args.seed)
    aug = corpus.augment(split)
    out = corpus.save_dataset(aug, args.out)
    _write_resolved(out, "preprocess", {k: str(v) for k, v in vars(args).items() if k != "func"})
    print(_format_stats(aug.stats), end="")
    return 0


def _format_stats(stats):
    width = max(len(k) for k in stats)
    return "".join(f"{k:<{width}}  {v}\n" for k, v in stats.items())


def cmd_synth(args):
    split = corpus.generate_synthetic(args.num_items, args.num_sessions, args.mean_length, args.block_size,
                                      args.seed, num_templates=args.num_templates)
    aug = corpus.augment(split)
    out = corpus.save_dataset(aug, args.out)
    _write_resolved(out, "synth", {k: str(v) for k, v in vars(args).items() if k != "func"})
    print(_format_stats(aug.stats), end="")
    return 0


def cmd_train(args):
    model_cfg, train_cfg, extra = _load_configs(args)
    data = _data_dir(args, extra)
    out = Path(args.out or extra.get("out") or "")
    if not str(out):
        raise UsageError("--out is required")
    split = corpus.load_dataset(data)
    model_cfg = dataclasses.replace(model_cfg, num_items=split.num_items)
    _write_resolved(out, "train", config_to_pairs(model_cfg, train_cfg, data=data, out=out))
    result = train(split, model_cfg, train_cfg, out_dir=out)
    rep = evaluate(result.model, split.test, train_cfg.batch_size) if split.test else None
    if rep is not None:
        (out / "test_report.txt").write_text(rep.to_text() + rep.to_kv(), encoding="utf-8")
        print(rep.to_text(), end="")
    print(f"best epoch {result.best_epoch}; checkpoint at {out / 'checkpoint'}")
    return 0


def cmd_eval(args):
    split = corpus.load_dataset(_data_dir(args, {}))
    try:
        model = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    if model.config.num_items != split.num_items:
        raise CheckpointError(f"checkpoint has {model.config.num_items} items, dataset has {split.num_items}")
    sessions = getattr(split, args.split)
    if not sessions:
        raise UsageError(f"split {args.split!r} is empty")
    rep = evaluate(model, sessions, args.batch_size)
    text = rep.to_text() + rep.to_kv()
    if args.out:
        out = Path(args.out)
        _write_resolved(out, "eval", {k: str(v) for k, v in vars(args).items() if k != "func"})
        (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _run_table(args, rows, name):
    text = format_table(rows, ks=(10, 20), buckets=True)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.txt").write_text(text, encoding="utf-8")
        (out / f"{name}.kv").write_text(format_kv(rows), encoding="utf-8")


def cmd_ablate(args):
    model_cfg, train_cfg, extra = _load_configs(args)
    split = corpus.load_dataset(_data_dir(args, extra))
    variants = args.variants.split(",") if args.variants else list(ABLATIONS)
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise UsageError(f"unknown ablation variants {unknown}; choose from {list(ABLATIONS)}")
    seeds = _seeds(args, extra, train_cfg.seed)
    if args.out:
        _write_resolved(Path(args.out), "ablate", config_to_pairs(
            model_cfg, train_cfg, data=args.data, seeds=",".join(map(str, seeds)), variants=",".join(variants)))
    _run_table(args, ablate(split, model_cfg, train_cfg, variants, seeds), "ablation")
    return 0


def cmd_sweep(args):
    model_cfg, train_cfg, extra = _load_configs(args)
    split = corpus.load_dataset(_data_dir(args, extra))
    try:
        key, values = parse_sweep(args.param)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seeds = _seeds(args, extra, train_cfg.seed)
    if args.out:
        _write_resolved(Path(args.out), "sweep", config_to_pairs(
            model_cfg, train_cfg, data=args.data, seeds=",".join(map(str, seeds)), param=args.param))
    _run_table(args, sweep(split, model_cfg, train_cfg, key, values, seeds), "sweep")
    return 0


def cmd_graph(args):
    items = [int(x) for x in args.session.replace(",", " ").split()]
    if not items:
        raise UsageError("--session needs at least one item id")
    print(dump_graph(build_mihsg(items, args.levels)), end="")
    return 0


def cmd_gradcheck(args):
    worst, per = grad_check(dim=args.dim, num_items=args.num_items, num_levels=args.levels,
                            num_heads=args.heads, num_layers=args.layers, readout=args.readout,
                            use_renorm=not args.no_renorm)
    for name, err in per.items():
        print(f"{name:<40} {err:.3e}")
    print(f"max relative error {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msgifsr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="raw click log -> processed dataset directory")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=["csv", "tsv", "jsonl"], default="csv")
    s.add_argument("--out", required=True)
    s.add_argument("--min-item-count", type=int, default=5)
    s.add_argument("--min-session-len", type=int, default=2)
    s.add_argument("--split-policy", choices=corpus.SPLIT_POLICIES, default="last_fraction")
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--test-days", type=float, default=7)
    s.add_argument("--test-input", help="test events for --split-policy provided_split")
    s.add_argument("--gap", type=int, default=None, help="split sessions on idle gaps longer than this (seconds)")
    s.add_argument("--valid-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="write a synthetic intent-block dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--num-items", type=int, default=60)
    s.add_argument("--num-sessions", type=int, default=1500)
    s.add_argument("--mean-length", type=float, default=6.0)
    s.add_argument("--block-size", type=int, default=3)
    s.add_argument("--num-templates", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train a model"),
                                 ("ablate", cmd_ablate, "train/test every ablation variant"),
                                 ("sweep", cmd_sweep, "train/test over one hyper-parameter grid")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data")
        s.add_argument("--config", help="flat key=value file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        s.add_argument("--out")
        if name != "train":
            s.add_argument("--seeds", help="comma-separated seeds to average over")
        if name == "ablate":
            s.add_argument("--variants", help=f"comma-separated subset of {','.join(ABLATIONS)}")
        if name == "sweep":
            s.add_argument("--param", required=True, help="e.g. K=1..7, num_layers=1,2,3, readout=MEAN,MAX+GRU")
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=["test", "valid", "train"], default="test")
    s.add_argument("--batch-size", type=int, default=512)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("graph", help="dump the intent graph of one session")
    s.add_argument("--session", required=True, help="item ids, space or comma separated")
    s.add_argument("--levels", type=int, default=2)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--num-items", type=int, default=10)
    s.add_argument("--levels", type=int, default=2)
    s.add_argument("--heads", type=int, default=2)
    s.add_argument("--layers", type=int, default=1)
    s.add_argument("--readout", default="MAX+GRU")
    s.add_argument("--no-renorm", action="store_true")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, corpus.CorpusError, FileNotFoundError) as exc:
        print(f"msgifsr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, TrainingDiverged) as exc:
        print(f"msgifsr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
