"""Command-line entry point: ``glitter <command> [options]``.

Settings resolve in this order, later winning: built-in defaults, the
checkpoint's stored config (``evaluate`` only), the ``--config`` YAML file,
``--set KEY=VALUE`` pairs, then dedicated flags such as ``--seed``. The
resolved document is printed before anything runs.

Exit codes: 0 success, 1 validation failure or runtime error, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, TrainConfig
from .data import SBMConfig, generate_sbm_dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .errors import GlitterError

log = logging.getLogger("glitter")

EVAL_DEFAULTS = {"reps": 10, "episodes": 50, "workers": 1, "knn_k": None}
SBM_KEYS = tuple(f.name for f in dataclasses.fields(SBMConfig) if f.name != "seed")


class UsageError(Exception):
    pass


def default_document() -> dict:
    doc = TrainConfig().to_dict()
    sbm = dataclasses.asdict(SBMConfig())
    doc.update({k: sbm[k] for k in SBM_KEYS})
    doc.update(EVAL_DEFAULTS)
    return doc


def _load_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({e})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of key: value pairs")
    return data


def _parse_set(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = yaml.safe_load(raw)
    return out


def resolve(args, base: dict | None = None) -> dict:
    doc = default_document()
    for layer in (base or {}, _load_file(args.config) if args.config else {}, _parse_set(args.set)):
        unknown = sorted(set(layer) - set(doc))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        doc.update(layer)
    if args.seed is not None:
        doc["seed"] = args.seed
    for key in ("reps", "episodes", "workers"):
        if getattr(args, key, None) is not None:
            doc[key] = getattr(args, key)
    return doc


def train_config(doc: dict) -> TrainConfig:
    return TrainConfig.from_dict({f.name: doc[f.name] for f in dataclasses.fields(TrainConfig)})


def sbm_config(doc: dict) -> SBMConfig:
    cfg = SBMConfig(seed=doc["seed"], **{k: doc[k] for k in SBM_KEYS})
    cfg.validate()
    return cfg


def show(doc: dict) -> None:
    print("# resolved configuration")
    print(yaml.safe_dump(doc, sort_keys=True, default_flow_style=None).rstrip())
    print("# ---")
    sys.stdout.flush()


def _emit_report(report, out) -> None:
    print(report.table())
    print(report.to_json())
    if out:
        Path(out).write_text(report.to_json() + "\n")


# ---------------------------------------------------------------- commands

def cmd_config(args) -> int:
    show(default_document() if args.defaults else resolve(args))
    return 0


def cmd_generate(args) -> int:
    doc = resolve(args)
    cfg = sbm_config(doc)
    show(doc)
    ds = generate_sbm_dataset(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.graphs)} graph(s), {ds.graphs[0].node_count} nodes each, to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .meta import train

    doc = resolve(args)
    cfg = train_config(doc)
    show(doc)
    ds = load_dataset(args.data)
    sink = open(args.log, "w") if args.log else None
    try:
        def on_record(rec):
            if sink:
                sink.write(json.dumps({"kind": "episode", **rec.to_dict()}) + "\n")
                sink.flush()
        ckpt, tlog = train(ds, cfg, on_record=on_record)
        if sink:
            for seen, acc in tlog.validation:
                sink.write(json.dumps({"kind": "validation", "episode": seen, "accuracy": acc}) + "\n")
            sink.write(json.dumps({"kind": "done", "wall_time": tlog.wall_time}) + "\n")
    finally:
        if sink:
            sink.close()
    save_checkpoint(ckpt, args.out)
    print(f"trained {cfg.epochs} meta-tasks in {tlog.wall_time:.1f}s; checkpoint at {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate

    ckpt = load_checkpoint(args.checkpoint)
    doc = resolve(args, base=ckpt.config)
    cfg = train_config(doc)
    show(doc)
    ds = load_dataset(args.data)
    report = evaluate(ckpt, ds, cfg=cfg, repetitions=doc["reps"], episodes_per_rep=doc["episodes"],
                      workers=doc["workers"])
    _emit_report(report, args.out)
    return 0


def cmd_baseline(args) -> int:
    from .evaluation import knn_evaluate, protonet_baseline_eval, protonet_baseline_train

    doc = resolve(args)
    cfg = train_config(doc)
    show(doc)
    ds = load_dataset(args.data)
    if args.model == "knn":
        report = knn_evaluate(ds, cfg, doc["reps"], doc["episodes"], k=doc["knn_k"])
    else:
        params = protonet_baseline_train(ds, cfg)
        report = protonet_baseline_eval(params, ds, cfg, doc["reps"], doc["episodes"])
    _emit_report(report, args.out)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    seed = 0 if args.seed is None else args.seed
    show({"suite": args.suite, "seed": seed})
    checks = run_suite(args.suite, seed)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glitter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{generate,train,evaluate,verify,baseline,config}")
    sub.required = True

    def command(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None)
        if config:
            p.add_argument("--config", metavar="FILE", help="YAML file of key: value settings")
            p.add_argument("--set", metavar="KEY=VALUE", action="append", help="override one setting")
        p.set_defaults(func=func)
        return p

    p = command("generate", cmd_generate, "write a synthetic SBM dataset")
    p.add_argument("--out", required=True, metavar="DIR")

    p = command("train", cmd_train, "meta-train and write a checkpoint")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="CKPT")
    p.add_argument("--log", metavar="LOG", help="line-delimited JSON training log")

    p = command("evaluate", cmd_evaluate, "meta-test a checkpoint")
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--reps", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", metavar="FILE", help="write the report record here")

    p = command("baseline", cmd_baseline, "run KNN or ProtoNet on the paired episode stream")
    p.add_argument("--model", required=True, choices=("knn", "protonet"))
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--reps", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", metavar="FILE")

    p = command("verify", cmd_verify, "run an oracle suite", config=False)
    p.add_argument("--suite", required=True, choices=("theorems", "gradients", "sampling"))

    p = command("config", cmd_config, "print the resolved configuration")
    p.add_argument("--defaults", action="store_true", help="print built-in defaults only")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"glitter: error: {e}", file=sys.stderr)
        return 2
    except (GlitterError, ConfigError, ValueError, OSError) as e:
        print(f"glitter: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
