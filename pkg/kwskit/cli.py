"""
Command-line interface.

    run_app.py <command> [--config PATH] [--seed N] [--out DIR] [--single-thread] ...

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import Dict, List, Optional

from kwskit.checkpoint import describe_checkpoint
from kwskit.datasets import Manifest, mix, read_manifest, sample_subset, sample_utterances, write_manifest
from kwskit.debug_utils import log_exception, setup_logging
from kwskit.errors import ConfigError, DataError, KwsError, NumericalError
from kwskit.interpolation import CurvePoint, interpolate_requirement, read_curve_csv
from kwskit.kws_config import load_config, save_config
from kwskit.kws_model import ModelConfig, model_size_report
from kwskit.services.service_manager import ExperimentServiceManager
from kwskit.speech_commands import import_speech_commands
from kwskit.toy_corpus import MANIFEST_NAME, toy_generate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class KwsArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; ours use 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration document")
    common.add_argument("--seed", type=int, help="Overrides train/eval/sweep seeds")
    common.add_argument("--out", help="Output directory (or file, for manifest commands)")
    common.add_argument("--single-thread", action="store_true",
                        help="No worker threads or processes (bit-reproducible runs)")
    common.add_argument("--quiet", action="store_true", help="Warnings and errors only")
    common.add_argument("--log-level", help="Logging level (default KWS_LOG_LEVEL)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = KwsArgumentParser(prog="kwskit", description="Custom keyword spotting toolkit")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    p = commands.add_parser("featurize", parents=[common], help="Cache log-mel features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", help="Defaults to --out, then train.feature_cache")

    p = commands.add_parser("import-speech-commands", parents=[common],
                            help="Manifest from a Speech Commands directory")
    p.add_argument("--root", required=True)
    p.add_argument("--subset", default="testing", choices=["testing", "validation", "training", "all"])

    p = commands.add_parser("toy-generate", parents=[common], help="Generate the toy tone corpus")
    p.add_argument("--n-phrases", type=int, default=20)
    p.add_argument("--per-phrase", type=int, default=40)
    p.add_argument("--n-speakers", type=int, default=12)
    p.add_argument("--phrase-offset", type=int, default=0)

    p = commands.add_parser("sample", parents=[common], help="Subsample a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-phrases", type=int)
    p.add_argument("--per-phrase", type=int)
    p.add_argument("--utterances", type=int, help="Sample this many records regardless of phrase")

    p = commands.add_parser("mix", parents=[common], help="Mix real and synthetic manifests")
    p.add_argument("--real")
    p.add_argument("--tts")

    p = commands.add_parser("train", parents=[common], help="Train an embedding model")
    p.add_argument("--real", help="Overrides train.real_manifest")
    p.add_argument("--tts", help="Overrides train.tts_manifest")
    p.add_argument("--eval", dest="eval_manifest", help="Overrides train.eval_manifest")
    p.add_argument("--max-steps", type=int)

    p = commands.add_parser("evaluate", parents=[common], help="Evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="Defaults to train.eval_manifest")

    p = commands.add_parser("sweep", parents=[common], help="Run a data-resource sweep")
    p.add_argument("--scenario", help="Overrides sweep.scenario")

    p = commands.add_parser("interpolate", parents=[common],
                            help="Real data needed for a target quality")
    p.add_argument("--curve", help="CSV with real_count, eer_percent, auc_percent")
    p.add_argument("--point", action="append", default=[], metavar="COUNT:EER:AUC",
                   help="Curve point, in increasing count order after any --curve rows")
    p.add_argument("--metric", choices=["eer", "auc"], default="eer")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--mode", choices=["raw", "log"], default="raw")

    p = commands.add_parser("report", parents=[common], help="Merge result tables")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--plots", action="store_true", help="Also render PNG figures")

    p = commands.add_parser("model-size", parents=[common], help="Parameter count and byte sizes")
    p.add_argument("--checkpoint", help="Describe a saved checkpoint instead of the configured model")
    return parser


def _overrides(args) -> Dict:
    overrides: Dict = {}
    if args.seed is not None:
        for section in ("train", "eval", "sweep"):
            overrides.setdefault(section, {})["seed"] = args.seed
    if args.single_thread:
        overrides.setdefault("train", {})["num_workers"] = 0
        overrides.setdefault("sweep", {})["max_workers"] = 1
    if getattr(args, "max_steps", None) is not None:
        overrides.setdefault("train", {})["max_steps"] = args.max_steps
    for attr, key in (("real", "real_manifest"), ("tts", "tts_manifest"),
                      ("eval_manifest", "eval_manifest")):
        if args.command == "train" and getattr(args, attr, None):
            overrides.setdefault("train", {})[key] = getattr(args, attr)
    if args.command == "sweep" and args.scenario:
        overrides.setdefault("sweep", {})["scenario"] = args.scenario
    return overrides


def _progress(args) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _require_out(args) -> str:
    if not args.out:
        raise ConfigError(f"{args.command} needs --out")
    return args.out


def _describe(manifest: Manifest) -> str:
    """One-line size summary: utterances, phrases, utterances per phrase and per source"""
    summary = manifest.summary()
    if summary.empty:
        return "0 utterances"
    per_phrase = summary.groupby("phrase")["utterances"].sum()
    per_source = summary.groupby("source")["utterances"].sum()
    sources = ", ".join(f"{source}={count}" for source, count in per_source.items())
    return (f"{len(manifest)} utterances, {len(per_phrase)} phrases "
            f"({per_phrase.min()}-{per_phrase.max()} per phrase; {sources})")


# --- commands ----------------------------------------------------------------

def cmd_featurize(args, config, manager) -> int:
    features = manager.require_service("features")
    cache_dir = args.cache_dir or args.out or features.cache_dir
    if not cache_dir:
        raise ConfigError("featurize needs --cache-dir, --out or train.feature_cache")
    report = features.featurize_manifest(read_manifest(args.manifest), cache_dir,
                                         show_progress=_progress(args))
    print(f"written {report.written}, cached {report.skipped}, failed {len(report.errors)}")
    for path, message in report.errors:
        print(f"FAILED {path}: {message}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_DATA


def cmd_import_speech_commands(args, config, manager) -> int:
    manifest = import_speech_commands(args.root, args.subset)
    write_manifest(manifest.resolved(), _require_out(args))
    print(f"{_describe(manifest)} -> {args.out}")
    return EXIT_OK


def cmd_toy_generate(args, config, manager) -> int:
    out_dir = _require_out(args)
    seed = config["train"]["seed"]
    manifest = toy_generate(args.n_phrases, args.per_phrase, out_dir, seed,
                            n_speakers=args.n_speakers, phrase_offset=args.phrase_offset,
                            show_progress=_progress(args))
    print(f"{_describe(manifest)} -> {os.path.join(out_dir, MANIFEST_NAME)}")
    return EXIT_OK


def cmd_sample(args, config, manager) -> int:
    manifest = read_manifest(args.manifest)
    seed = config["train"]["seed"]
    if args.utterances is not None:
        subset = sample_utterances(manifest, args.utterances, seed)
    elif args.n_phrases is not None and args.per_phrase is not None:
        subset = sample_subset(manifest, args.n_phrases, args.per_phrase, seed)
    else:
        raise ConfigError("sample needs --utterances, or both --n-phrases and --per-phrase")
    write_manifest(subset.resolved(), _require_out(args))
    print(f"{_describe(subset)} -> {args.out}")
    return EXIT_OK


def cmd_mix(args, config, manager) -> int:
    if not args.real and not args.tts:
        raise ConfigError("mix needs --real and/or --tts")
    real = read_manifest(args.real) if args.real else Manifest()
    tts = read_manifest(args.tts) if args.tts else Manifest()
    merged = mix(real, tts)
    write_manifest(merged, _require_out(args))
    print(f"{_describe(merged)} -> {args.out}")
    return EXIT_OK


def cmd_train(args, config, manager) -> int:
    train = config["train"]
    parts = [read_manifest(p) for p in (train["real_manifest"], train["tts_manifest"]) if p]
    if not parts:
        raise ConfigError("train needs train.real_manifest and/or train.tts_manifest")
    train_manifest = parts[0].resolved() if len(parts) == 1 else mix(parts[0], parts[1])
    eval_manifest = read_manifest(train["eval_manifest"]) if train["eval_manifest"] else None
    checkpoint_dir = args.out or train["checkpoint_dir"]
    config["train"]["checkpoint_dir"] = checkpoint_dir
    save_config(config, os.path.join(checkpoint_dir, "config.json"))

    trainer = manager.require_service("trainer")
    result = trainer.train(train_manifest, eval_manifest, checkpoint_dir,
                           show_progress=_progress(args))
    print(f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}; best step {result.best_step}"
          + (f" (AUC {result.best_auc:.2f}%, EER {result.best_eer:.2f}%)" if result.evaluations else ""))
    print(f"checkpoints in {checkpoint_dir}")
    return EXIT_OK


def cmd_evaluate(args, config, manager) -> int:
    manifest_path = args.manifest or config["train"]["eval_manifest"]
    if not manifest_path:
        raise ConfigError("evaluate needs --manifest or train.eval_manifest")
    out_dir = args.out or os.path.join("runs", "eval")
    evaluator = manager.require_service("evaluator")
    result = evaluator.evaluate_checkpoint(args.checkpoint, read_manifest(manifest_path),
                                           show_progress=_progress(args))
    evaluator.write_outputs(result, out_dir)
    save_config(config, os.path.join(out_dir, "config.json"))
    print(f"{len(result.per_phrase)} phrases: mean EER {result.aggregate.eer_percent:.2f}%, "
          f"mean AUC {result.aggregate.auc_percent:.2f}% -> {out_dir}")
    return EXIT_OK


def cmd_sweep(args, config, manager) -> int:
    out_dir = args.out or os.path.join("runs", "sweep")
    frame = manager.require_service("sweep").run(out_dir, show_progress=_progress(args))
    failed = int((frame["status"] != "ok").sum())
    print(frame[["n_phrases", "per_phrase", "real_count", "eer_percent", "auc_percent", "status"]]
          .to_string(index=False))
    return EXIT_OK if failed == 0 else EXIT_DATA


def _parse_point(text: str) -> CurvePoint:
    try:
        count, eer_value, auc_value = text.split(":")
        return CurvePoint(int(count), float(eer_value), float(auc_value))
    except ValueError as e:
        raise ConfigError(f"--point expects COUNT:EER:AUC, got '{text}' ({e})")


def cmd_interpolate(args, config, manager) -> int:
    points: List[CurvePoint] = read_curve_csv(args.curve) if args.curve else []
    points += [_parse_point(p) for p in args.point]
    required = interpolate_requirement(points, args.metric, args.target, args.mode)
    print(required)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "interpolation.json"), "w", encoding="utf-8") as f:
            json.dump({"metric": args.metric, "target": args.target, "mode": args.mode,
                       "required_real_count": required,
                       "points": [asdict(p) for p in points]}, f, indent=2)
            f.write("\n")
    return EXIT_OK


def cmd_report(args, config, manager) -> int:
    out_dir = args.out or os.path.join("runs", "report")
    summary = manager.require_service("report").build(args.inputs, out_dir, plots=args.plots)
    for kind, table in sorted(summary["tables"].items()):
        print(f"{kind}: {table['rows']} rows -> {table['path']}")
    return EXIT_OK


def cmd_model_size(args, config, manager) -> int:
    model_config = ModelConfig.from_dict(config["model"])
    if args.checkpoint:
        info = describe_checkpoint(args.checkpoint)
        print(f"checkpoint: {info['path']} ({info['kind']}, {info['tensors']} tensors, "
              f"{info['bytes']:,} bytes on disk)")
        model_config = ModelConfig.from_dict(info["config"])
    report = model_size_report(model_config)
    for key, value in report.items():
        print(f"{key}: {value:,}")
    return EXIT_OK


COMMANDS = {
    "featurize": cmd_featurize,
    "import-speech-commands": cmd_import_speech_commands,
    "toy-generate": cmd_toy_generate,
    "sample": cmd_sample,
    "mix": cmd_mix,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "interpolate": cmd_interpolate,
    "report": cmd_report,
    "model-size": cmd_model_size,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one command and map failures to exit codes

    Args:
        argv (list, optional): Arguments without the program name

    Returns:
        int: Process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, quiet=args.quiet)
    try:
        config = load_config(args.config, _overrides(args))
        manager = ExperimentServiceManager(config)
        return COMMANDS[args.command](args, config, manager)
    except ConfigError as e:
        log_exception(e, args.command)
        return EXIT_USAGE
    except NumericalError as e:
        log_exception(e, args.command)
        return EXIT_NUMERICAL
    except (DataError, OSError) as e:
        log_exception(e, args.command)
        return EXIT_DATA
    except KwsError as e:
        log_exception(e, args.command)
        return e.exit_code
