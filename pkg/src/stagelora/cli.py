"""Command line entry point: ``stagelora <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 state error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .categories import COMPOUND_PARENTS, LABEL_SETS, label_set
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ContractError, DataError, StageLoraError, StateError, TapeStateError
from .fileio import atomic_write_text
from .metrics import parse_csv_report, render_table
from .parsing import ParseError, parse, parse_lenient
from .pipeline import (
    end_to_end_eval,
    stage_seeds,
    train_single_stage,
    train_stage1,
    train_stage2,
    transition_checkpoint,
)
from .prompts import PromptSpec, build_prompt, default_prompt_spec
from .seeding import default_seed
from .synth import SynthSpec, generate, read_manifest, write_manifest
from .training import StageConfig, stage1_defaults, stage2_defaults

log = logging.getLogger("stagelora")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STATE = 0, 2, 3, 4


class UsageError(StageLoraError):
    pass


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_synth(args: argparse.Namespace) -> int:
    parents = {name: COMPOUND_PARENTS[name] for name in LABEL_SETS[args.compound_set]}
    spec = SynthSpec(
        d_in=args.dim,
        compound_parents=parents,
        noise_sigma=args.sigma,
        examples_per_class=args.per_class,
        seed=stage_seeds(args.seed)["data"],
    )
    basic, compound = generate(spec)
    out = Path(args.out_dir)
    write_manifest(basic, out / "basic.jsonl")
    write_manifest(compound, out / "compound.jsonl")
    log.info("wrote %d basic and %d compound records to %s", len(basic.records), len(compound.records), out)
    return EXIT_OK


def _stage_config(args: argparse.Namespace, labels: Sequence[str]) -> StageConfig:
    seeds = stage_seeds(args.seed)
    if args.stage == 1:
        cfg = stage1_defaults(seeds["stage1"], labels)
    else:
        cfg = stage2_defaults(seeds["stage2"], labels)
    overrides = {
        "rank": args.rank,
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "optimizer": args.optimizer,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args: argparse.Namespace) -> int:
    manifest_path = _existing(args.manifest, "manifest")
    ckpt_path = _existing(args.from_checkpoint, "checkpoint")
    if args.stage == 2 and ckpt_path is None and not args.allow_singlestage:
        raise StateError("stage 2 needs a stage-1 checkpoint (--from-checkpoint); stage-wise order is enforced")
    if args.stage == 1 and ckpt_path is not None:
        raise UsageError("stage 1 starts from the base network; --from-checkpoint is only for stage 2")
    manifest = read_manifest(manifest_path)
    data = manifest.split(args.split)
    cfg = _stage_config(args, manifest.labels)
    if args.stage == 1:
        ckpt, records = train_stage1(cfg, data, manifest.dimension, args.seed)
    elif ckpt_path is None:
        ckpt, records = train_single_stage(cfg, data, manifest.dimension, args.seed)
    else:
        source = load_checkpoint(ckpt_path)
        if source.net.d_in != manifest.dimension:
            raise DataError(f"checkpoint expects {source.net.d_in} features, manifest has {manifest.dimension}")
        ckpt, records = train_stage2(source, cfg, data)
    save_checkpoint(ckpt, args.out)
    if records:
        log.info("final train accuracy %.4f", records[-1].train_accuracy)
    return EXIT_OK


def cmd_transition(args: argparse.Namespace) -> int:
    source = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    if args.manifest:
        labels = read_manifest(_existing(args.manifest, "manifest")).labels
    else:
        labels = label_set(args.labels)
    cfg = stage2_defaults(stage_seeds(args.seed)["stage2"], labels)
    if args.rank is not None:
        cfg = replace(cfg, rank=args.rank)
    save_checkpoint(transition_checkpoint(source, cfg), args.out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    manifest = read_manifest(_existing(args.manifest, "manifest"))
    spec = None
    if args.prompt_spec:
        spec = PromptSpec.from_json(_existing(args.prompt_spec, "prompt spec").read_text(encoding="utf-8"))
    elif args.via_prompt:
        spec = default_prompt_spec(ckpt.net.active_labels)
    report = end_to_end_eval(ckpt, manifest, spec, split=args.split, lenient=args.lenient)
    _emit(render_table(report, args.format), args.out)
    return EXIT_OK


def cmd_prompt(args: argparse.Namespace) -> int:
    if args.spec:
        spec = PromptSpec.from_json(_existing(args.spec, "prompt spec").read_text(encoding="utf-8"))
    else:
        spec = default_prompt_spec(label_set(args.categories))
    if args.spec_out:
        atomic_write_text(args.spec_out, spec.to_json())
    _emit(build_prompt(spec), args.out)
    return EXIT_OK


def cmd_parse(args: argparse.Namespace) -> int:
    transcript = sys.stdin.read()
    fn = parse_lenient if args.lenient else parse
    try:
        parsed = fn(transcript, label_set(args.categories))
    except ParseError as exc:
        sys.stdout.write(json.dumps({"error": type(exc).__name__, "fragment": exc.fragment}) + "\n")
        raise
    sys.stdout.write(json.dumps(parsed.to_record(), ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = parse_csv_report(_existing(args.input, "report").read_text(encoding="utf-8"))
    _emit(render_table(report, args.format), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stagelora", description="Stage-wise LoRA compound-expression pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (default: $SLRA_SEED or 0)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic basic/compound manifests")
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--compound-set", choices=("compound", "challenge"), default="compound")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--from-checkpoint", help="stage-1 checkpoint (required for --stage 2)")
    p.add_argument("--split", default="train")
    p.add_argument("--rank", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--allow-singlestage", action="store_true", help="ablation: stage 2 from the base network")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transition", parents=[common], help="merge stage-1 adapters and prepare stage 2")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", help="take the stage-2 label set from this manifest")
    group.add_argument("--labels", help="named label set or comma-separated list")
    p.add_argument("--rank", type=int)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("eval", parents=[common], help="accuracy table for a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.add_argument("--split", default="test")
    p.add_argument("--prompt-spec", help="route predictions through this prompt spec and the parser")
    p.add_argument("--via-prompt", action="store_true", help="route predictions through the default prompt")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prompt", parents=[common], help="print the context prompt")
    p.add_argument("--categories", default="challenge", help="basic, compound, challenge or a comma list")
    p.add_argument("--spec", help="prompt spec JSON to render instead of the default")
    p.add_argument("--spec-out", help="also write the prompt spec as JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("parse", parents=[common], help="parse a model transcript from stdin")
    p.add_argument("--categories", default="challenge")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("report", parents=[common], help="re-render a CSV report")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.seed is None:
        args.seed = default_seed()
    logging.basicConfig(
        stream=sys.stderr,
        format="%(message)s",
        level=logging.WARNING if args.quiet else logging.INFO,
        force=True,
    )
    try:
        return args.func(args)
    except (UsageError, ContractError) as exc:
        log.error("usage error: %s", exc)
        return EXIT_USAGE
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (StateError, TapeStateError) as exc:
        log.error("state error: %s", exc)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
