"""Command-line entry point: ``fusecore make-data | train | generate | eval``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ConfigError, load_config
from .reasoner.decoding import GenerationConfig
from .reasoner.prompts import TASKS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
STAGE_FILES = {0: "lm_corpus.jsonl", 1: "stage1.jsonl", 2: "stage2.jsonl"}
SPLIT_NAMES = {"val": "val.jsonl", "test": "eval.jsonl", "eval": "eval.jsonl"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class RecordSample:
    """A dataset record with its video, shaped like a generated sample."""

    seed: int
    video: object
    caption: str
    task: str
    response: str

    def text_for(self, task: str) -> str:
        return self.caption if task == "caption" else self.response


def _config(args):
    return load_config(args.config)


def _refuse_reference(cfg) -> None:
    if cfg.preset == "paper":
        raise UsageError("the 'paper' preset is a reference configuration and cannot be run at desk scale")


def _gen_config(cfg, args) -> GenerationConfig:
    gen = cfg.generation
    updates = {}
    for flag in ("strategy", "top_p", "temperature", "beam_width", "max_new_tokens", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            updates[flag] = value
    return replace(gen, **updates)


# -- subcommands -----------------------------------------------------------------

def cmd_make_data(args) -> int:
    from .model import build_vocabulary
    from .synth.dataset import emit_dataset

    cfg = _config(args)
    _refuse_reference(cfg)
    enc = cfg.model.encoder
    out = Path(args.out or cfg.data.out_dir)
    paths = emit_dataset(out, cfg.data.splits, cfg.data.world, enc.height, enc.width, enc.channels,
                         build_vocabulary(), force=args.force)
    for p in paths:
        print(p)
    return EXIT_OK


def _load_examples(bundle, stage: int, data_dir: Path, limit):
    from .synth.dataset import load_video, make_sample, read_dataset
    from .synth.world import WorldConfig
    from .training.trainer import VisionCache, stage_examples

    path = data_dir / STAGE_FILES[stage]
    header, records = read_dataset(path)
    if limit is not None:
        records = records[:limit]
    if stage == 0:
        # pretraining records carry no video file; render from the seed
        world = WorldConfig(**header["world"])
        _, h, w, c = header["frame"]
        samples = [make_sample(r["seed"], world, h, w, c) for r in records]
    else:
        samples = [RecordSample(r["seed"], load_video(path, r), r["caption"], r.get("task", "caption"),
                                r["response"]) for r in records]
    return stage_examples(bundle, stage, samples, VisionCache(bundle))


def cmd_train(args) -> int:
    from .model import VideoReasoner
    from .training import checkpoint as ckpt_io
    from .training.trainer import Trainer, bundle_from_checkpoint, start_stage

    cfg = _config(args)
    _refuse_reference(cfg)
    data_dir = Path(args.data or cfg.data.out_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"stage{args.stage}.fckp"
    log_path = out_dir / f"train_stage{args.stage}.jsonl"
    if args.resume:
        resume_state = ckpt_io.load(args.resume).json_blob("state")
        if resume_state["stage"] != args.stage:
            raise UsageError(f"--resume checkpoint is from stage {resume_state['stage']}, not {args.stage}")
        bundle, _ = bundle_from_checkpoint(ckpt_io.load(args.resume))
        examples = _load_examples(bundle, args.stage, data_dir, args.limit)
        trainer = Trainer.resume(args.resume, examples, log_path=str(log_path))
    else:
        if ckpt_path.exists() and not args.force:
            raise UsageError(f"{ckpt_path} exists (use --force to overwrite)")
        if log_path.exists():
            log_path.unlink()
        if args.init:
            bundle, state = bundle_from_checkpoint(ckpt_io.load(args.init))
            completed = tuple(state["completed_stages"])
        elif args.stage > 0 and not args.override_order:
            raise UsageError(f"stage {args.stage} needs --init with a stage-{args.stage - 1} checkpoint")
        else:
            bundle, completed = VideoReasoner(cfg), ()
        examples = _load_examples(bundle, args.stage, data_dir, args.limit)
        trainer = start_stage(bundle, args.stage, examples, bundle.cfg.training.stage(args.stage),
                              completed, args.override_order, str(log_path))
    trainer.run(steps=args.steps, checkpoint_path=ckpt_path)
    print(json.dumps({"checkpoint": str(ckpt_path), "step": trainer.step_count,
                      "total_steps": trainer.total_steps, "loss": trainer.losses[-1] if trainer.losses else None}))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .synth.dataset import read_fvid
    from .training.trainer import load_bundle

    bundle, _ = load_bundle(args.checkpoint)
    frames = read_fvid(args.video)
    text = bundle.infer(frames, args.task, _gen_config(bundle.cfg, args))
    print(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation.runner import run_eval
    from .training.trainer import load_bundle

    cfg = _config(args)
    split = Path(args.split)
    if args.split in SPLIT_NAMES:
        split = Path(args.data or cfg.data.out_dir) / SPLIT_NAMES[args.split]
    if args.out and Path(args.out).exists() and not args.force:
        raise UsageError(f"{args.out} exists (use --force to overwrite)")
    bundle, _ = load_bundle(args.checkpoint)
    report = run_eval(args.checkpoint, split, _gen_config(bundle.cfg, args), out=args.out, limit=args.limit)
    print(json.dumps(report.summary()["scores"], sort_keys=True))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _decoding_flags(p) -> None:
    p.add_argument("--strategy", choices=("greedy", "nucleus", "beam"), help="decoding strategy")
    p.add_argument("--top-p", dest="top_p", type=float, help="nucleus mass threshold in (0, 1]")
    p.add_argument("--temperature", type=float, help="softmax temperature (> 0)")
    p.add_argument("--beam-width", dest="beam_width", type=int, help="beams kept by beam search")
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int, help="generation length cap")
    p.add_argument("--seed", type=int, help="sampling seed")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (default: the toy preset)")

    parser = _Parser(prog="fusecore", description="Video event reasoning pipeline at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", parents=[common], help="generate the synthetic dataset")
    p.add_argument("--out", help="output directory (default: data.out_dir from the config)")
    p.add_argument("--force", action="store_true", help="overwrite existing dataset files")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", parents=[common], help="run one training stage")
    p.add_argument("--stage", type=int, choices=(0, 1, 2), required=True,
                   help="0 = language-model pretraining, 1 = alignment, 2 = instruction tuning")
    p.add_argument("--data", help="dataset directory (default: data.out_dir)")
    p.add_argument("--out", default="runs", help="directory for checkpoints and logs (default: runs)")
    p.add_argument("--init", help="checkpoint of the previous stage to start from")
    p.add_argument("--resume", help="checkpoint of this stage to continue")
    p.add_argument("--steps", type=int, help="stop after this many more updates")
    p.add_argument("--limit", type=int, help="use only the first N training records")
    p.add_argument("--override-order", action="store_true", help="allow a stage without its predecessor")
    p.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="describe, explain or predict for one video")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint (.fckp)")
    p.add_argument("--video", required=True, help="video file (.fvid)")
    p.add_argument("--task", choices=TASKS, default="reasoning", help="prompt template to use")
    _decoding_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint (.fckp)")
    p.add_argument("--split", default="test", help="val, test, or a path to a dataset file")
    p.add_argument("--data", help="dataset directory (default: data.out_dir)")
    p.add_argument("--out", help="report file (JSON lines)")
    p.add_argument("--limit", type=int, help="score only the first N records")
    p.add_argument("--force", action="store_true", help="overwrite an existing report")
    _decoding_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fusecore: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"fusecore: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
