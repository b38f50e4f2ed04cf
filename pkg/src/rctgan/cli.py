"""Command-line surface: fit, sample, evaluate.

Exit codes: 0 ok, 2 input error (metadata, data, config), 3 training or
runtime failure. RCTGAN_LOG in {error, info, debug} controls verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import threading

from . import dataset, detection, gan, schema, synthesizer
from .gan import TrainConfig

log = logging.getLogger("rctgan")

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_POSITIVE_FIELDS = ("epochs", "batch_size", "z_dim", "pac", "critic_steps", "lr",
                    "beta1", "beta2", "max_depth", "max_modes")


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    seed: int = 0
    folds: int = 3


def parse_run_config(doc: dict) -> RunConfig:
    """Full-word JSON keys matching TrainConfig plus seed/folds; unknown keys rejected."""
    known = set(_TRAIN_FIELDS) | {"seed", "folds"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    train_kwargs = {}
    for key, value in doc.items():
        if key in ("seed", "folds"):
            continue
        if key in ("gen_hidden", "critic_hidden"):
            value = tuple(int(v) for v in value)
        train_kwargs[key] = value
    try:
        train = TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for name in _POSITIVE_FIELDS:
        if getattr(train, name) <= 0:
            raise ConfigError(f"config field {name!r} must be positive")
    seed = int(doc.get("seed", 0))
    folds = int(doc.get("folds", 3))
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    return RunConfig(train=train, seed=seed, folds=folds)


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("RCTGAN_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_inputs(metadata_path, data_path):
    meta = schema.load_metadata(metadata_path)
    db = dataset.load_database(meta, data_path)
    violations = dataset.check_referential_integrity(db)
    if violations:
        raise synthesizer.IntegrityError(violations)
    return meta, db


def cmd_fit(args) -> int:
    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    # command-line flags override config-file values
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.depth is not None:
        doc["max_depth"] = args.depth
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    run = parse_run_config(doc)

    _, db = _load_inputs(args.metadata, args.data)
    log_path = args.log or args.out + ".train.jsonl"
    lock = threading.Lock()
    with open(log_path, "w", encoding="utf-8") as log_fh:
        def on_epoch(record: dict) -> None:
            line = json.dumps(record)
            with lock:
                log_fh.write(line + "\n")
            log.info("epoch %s", line)

        model = synthesizer.fit_database(db, run.train, seed=run.seed,
                                         epoch_callback=on_epoch, threads=args.threads)
    synthesizer.save_model(model, args.out)
    log.info("model written to %s (training log: %s)", args.out, log_path)
    return 0


def cmd_sample(args) -> int:
    if args.scale <= 0:
        raise ConfigError("--scale must be > 0")
    model = synthesizer.load_model(args.model)
    db = synthesizer.sample_database(model, scale=args.scale, seed=args.seed or 0)
    dataset.write_database(db, args.out)
    log.info("synthetic database written to %s", args.out)
    return 0


def cmd_eval(args) -> int:
    if args.folds is not None and args.folds < 2:
        raise ConfigError("--folds must be >= 2")
    meta, real_db = _load_inputs(args.metadata, args.real)
    synth_db = dataset.load_database(meta, args.synth)
    violations = dataset.check_referential_integrity(synth_db)
    if violations:
        raise synthesizer.IntegrityError(violations)

    report = detection.build_report(real_db, synth_db,
                                    folds=args.folds or 3, seed=args.seed or 0)
    payload = report.to_json()
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")

    name_width = max([len(n) for n in payload["tables"]] + [5])
    print(f"{'table':<{name_width}}  {'ld':>8}  {'auc':>8}")
    for name, scores in payload["tables"].items():
        print(f"{name:<{name_width}}  {scores['ld']:>8.4f}  {scores['auc']:>8.4f}")
    if payload["relationships"]:
        print(f"{'child':<{name_width}}  {'pc_ld':>8}  {'auc':>8}")
        for rel in payload["relationships"]:
            print(f"{rel['child']:<{name_width}}  {rel['pc_ld']:>8.4f}  {rel['auc']:>8.4f}")
    avg_pc = "-" if payload["avg_pc_ld"] is None else f"{payload['avg_pc_ld']:.4f}"
    print(f"avg_ld {payload['avg_ld']:.4f}  avg_pc_ld {avg_pc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rctgan",
        description="Fit, sample and evaluate relational tabular GAN synthesizers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a database model from CSVs")
    p_fit.add_argument("--metadata", required=True)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--config", default=None)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--depth", type=int, choices=(1, 2), default=None)
    p_fit.add_argument("--epochs", type=int, default=None)
    p_fit.add_argument("--threads", type=int, default=1)
    p_fit.add_argument("--log", default=None, help="training-log path (default <out>.train.jsonl)")
    p_fit.set_defaults(func=cmd_fit)

    p_sample = sub.add_parser("sample", help="sample a synthetic database from a model")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--scale", type=float, default=1.0)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="score a synthetic database against the real one")
    p_eval.add_argument("--metadata", required=True)
    p_eval.add_argument("--real", required=True)
    p_eval.add_argument("--synth", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--folds", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)
    return parser


INPUT_ERRORS = (
    schema.SchemaError,
    dataset.DatasetError,
    synthesizer.IntegrityError,
    synthesizer.CorruptFile,
    synthesizer.VersionMismatch,
    detection.SingleClass,
    ConfigError,
    FileNotFoundError,
    json.JSONDecodeError,
)
RUNTIME_ERRORS = (gan.EmptyTable, gan.NonFiniteLoss, ValueError)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
