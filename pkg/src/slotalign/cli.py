"""Command-line entry point: corpus generation, training, evaluation, gradient checks, ablations.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
The log level comes from the ``LUNA_LOG`` environment variable (default INFO).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig
from .corpus import CorpusError, InputTooLongError, load_multiwoz, save_corpus
from .encoders import EncoderInputError
from .tensor import NonFiniteError

log = logging.getLogger("slotalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config_hash: str | None
    seed: int | None
    artifact_version: str
    started: str
    finished: str | None = None
    outputs: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir) -> None:
        Path(out_dir, "run_manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _manifest(args, config: TrainConfig | None, seed: int | None) -> RunManifest:
    return RunManifest(args.command, sys.argv[1:] if args.argv is None else list(args.argv),
                       None if config is None else config.hash(), seed, _version(), _now())


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.paper_hparams() if getattr(args, "paper_hparams", False) else TrainConfig()
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **raw})
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


# ------------------------------------------------------------------ commands

def cmd_gen_corpus(args) -> int:
    from .synthetic import generate_synthetic_corpus, load_ontology_spec

    out = Path(args.out)
    onto_path = out.with_name("ontology.json")
    if not args.force and (out.exists() or onto_path.exists()):
        raise UsageError(f"{out} or {onto_path} exists; pass --force to overwrite")
    spec = load_ontology_spec(args.ontology_spec) if args.ontology_spec else None
    dialogues, ontology = generate_synthetic_corpus(args.seed, args.n, spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(dialogues, ontology, out)
    log.info("wrote %d dialogues to %s (ontology %s)", len(dialogues), out, onto_path)
    return EXIT_OK


def cmd_train(args) -> int:
    from .corpus import Vocab
    from .trainer import train

    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, config, config.seed)
    dialogues, ontology = load_multiwoz(args.corpus)
    dev = load_multiwoz(args.dev, Path(args.corpus).with_name("ontology.json"))[0] if args.dev else None
    vocab = Vocab.build(dialogues + (dev or []), ontology)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    with threadpool_limits(args.threads):
        res = train(dialogues, dev, ontology, config, vocab=vocab, out_dir=out, resume=args.resume)
    manifest.finished = _now()
    manifest.outputs = {"best_checkpoint": str(out / "best.ckpt"), "last_checkpoint": str(out / "last.ckpt"),
                        "loss_log": str(out / "loss_log.csv"), "config": str(out / "config.json")}
    manifest.write(out)
    print(json.dumps({"best_dev_score": res.best_dev_joint, "best_epoch": res.best_epoch,
                      "epochs_run": res.epochs_run, "global_step": res.global_step}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluator import predict, report_from_predictions, write_predictions

    model, _, _ = load_checkpoint(args.checkpoint)
    dialogues, _ = load_multiwoz(args.corpus, args.ontology)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, model.config, model.config.seed)
    soft = {"hard": False, "soft": True, None: None}[args.mode]
    attention = [] if args.dump_attention else None
    with threadpool_limits(args.threads):
        preds = predict(model, dialogues, soft=soft, keep_attention=attention is not None,
                        attention_sink=attention)
    report = report_from_predictions(preds)
    report.write_json(out / "eval_report.json")
    report.write_per_turn_csv(out / "per_turn.csv")
    manifest.outputs = {"report": str(out / "eval_report.json"), "per_turn": str(out / "per_turn.csv")}
    if args.dump_predictions:
        write_predictions(preds, args.dump_predictions)
        manifest.outputs["predictions"] = str(args.dump_predictions)
    if attention is not None:
        Path(args.dump_attention).write_text(json.dumps(attention) + "\n")
        manifest.outputs["attention"] = str(args.dump_attention)
    manifest.finished = _now()
    manifest.write(out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from . import tensor as T
    from .diagnostics import all_passed, check_loss_gradients, format_report

    overrides = json.loads(Path(args.config).read_text()) if args.config else None
    if args.break_op:
        with T.broken_backward(args.break_op):
            checks = check_loss_gradients(args.seed, args.samples, args.tol, overrides=overrides)
    else:
        checks = check_loss_gradients(args.seed, args.samples, args.tol, overrides=overrides)
    print(format_report(checks))
    if not all_passed(checks):
        raise NumericFailure("gradient check failed")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluator import run_ablations

    config = _load_config(args)
    train_d, ontology = load_multiwoz(args.corpus)
    eval_d = load_multiwoz(args.eval_corpus, Path(args.corpus).with_name("ontology.json"))[0] \
        if args.eval_corpus else train_d
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, config, config.seed)
    seeds = [int(s) for s in args.seeds.split(",")] if "," in args.seeds else list(range(int(args.seeds)))
    with threadpool_limits(args.threads):
        rows = run_ablations(train_d, eval_d, ontology, config, seeds, out)
    manifest.finished = _now()
    manifest.outputs = {"table": str(out / "ablation.csv"), "runs": str(out / "runs.jsonl")}
    manifest.write(out)
    for r in rows:
        print(json.dumps(r.summary()))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slotalign", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-corpus", help="generate a synthetic multi-domain corpus")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=250, help="number of dialogues")
    g.add_argument("--out", required=True, help="corpus JSON path (ontology.json is written beside it)")
    g.add_argument("--ontology-spec", help="JSON file with domains/slots/values for the generator")
    g.add_argument("--force", action="store_true", help="overwrite existing files")
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train a tracker")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--corpus", required=True)
    t.add_argument("--dev", help="dev corpus for model selection (same ontology)")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    t.add_argument("--paper-hparams", action="store_true", help="start from the large-scale (pretrained-encoder) presets")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = bitwise reproducible)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--ontology", help="ontology JSON (default: beside the corpus)")
    e.add_argument("--out", help="output directory (default: the checkpoint's directory)")
    e.add_argument("--mode", choices=["hard", "soft"], help="override the checkpoint's selection mode")
    e.add_argument("--dump-predictions", metavar="PATH")
    e.add_argument("--dump-attention", metavar="PATH")
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference check of all training losses")
    c.add_argument("--config", help="JSON overrides for the tiny check instance")
    c.add_argument("--samples", type=int, default=3, help="coordinates sampled per parameter tensor")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--break-op", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_grad_check)

    a = sub.add_parser("ablate", help="train/evaluate the ablation variants over several seeds")
    a.add_argument("--config")
    a.add_argument("--corpus", required=True)
    a.add_argument("--eval-corpus")
    a.add_argument("--seeds", default="3", help="a count (0..n-1) or a comma-separated list")
    a.add_argument("--out", required=True)
    a.add_argument("--epochs", type=int)
    a.add_argument("--threads", type=int, default=1)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("LUNA_LOG", "INFO").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    args.argv = argv
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, CheckpointError, ConfigError, InputTooLongError, EncoderInputError, FileNotFoundError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, NonFiniteError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
