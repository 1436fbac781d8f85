"""
Command-line entry point for Ord2Seq experiments.

Usage:
    cd ord2seq
    python cli.py generate --categories 8 --target-oracle-accuracy 0.85 --out data/n8
    python cli.py train --categories 8 --alpha 0.3 --data data/n8 --out runs/full
    python cli.py evaluate --checkpoint runs/full/checkpoint.json --out runs/full/eval
    python cli.py decode --checkpoint runs/full/checkpoint.json --trace --limit 5 --out runs/full/trace
    python cli.py sweep-alpha --categories 8 --data data/n8 --seeds 0,1,2 --out runs/sweep
    python cli.py ablation --categories 8 --data data/n8 --seeds 0,1,2,3,4 --out runs/ablation
    python cli.py report --sweep runs/sweep/sweep.csv --ablation runs/ablation/ablation.json --out runs
    python cli.py replay --manifest runs/full/manifest.json --out runs/full-replay

Exit codes: 0 success, 2 usage or configuration error, 3 non-finite training
loss (diagnostics path on stderr), 1 any other failure.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

BACKEND = str(Path(__file__).resolve().parent)
if BACKEND not in sys.path:
    sys.path.insert(0, BACKEND)

import torch
from pydantic import ValidationError

from analyzers.bayes_oracle import bayes_oracle, noise_for_oracle_accuracy
from analyzers.experiments import (
    DEFAULT_ALPHA_GRID,
    TORCH_THREADS,
    ablation,
    decode_trained,
    evaluate_trained,
    load_trained,
    run_experiment,
    sweep_alpha,
    sweep_frame,
    worker_count,
)
from analyzers.report import render_report
from models.masked_decision import DEFAULT_ALPHA
from models.ord2seq_model import ModelConfig
from models.trainer import TrainConfig, Variant
from utils.checkpoint import atomic_write_text
from utils.data_loader import SyntheticBench, SyntheticSpec, generate, resolve_data, save_dataset
from utils.errors import ConfigError, InvalidCategoryCountError, NaNLossError, SpecError
from utils.manifest import (
    TOOL_VERSION,
    RunManifest,
    TraceRecord,
    hash_data_path,
    load_manifest,
    write_jsonl,
    write_manifest,
    write_record,
)

logger = logging.getLogger("ord2seq")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NAN = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _say(message: str) -> None:
    print(f"[ord2seq] {message}", flush=True)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("list is empty")
    return values


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("alpha grid is empty")
    return values


# --------------------------------------------------------------------------
# Flag groups
# --------------------------------------------------------------------------
def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset directory (from generate) or a SyntheticSpec JSON file")
    p.add_argument("--noise", type=float, default=0.0, help="sigma for inline data when --data is absent")
    p.add_argument("--data-seed", type=int, default=0, help="generator seed for inline data")
    p.add_argument("--index-base", type=int, default=0, help="external label index base for inline data")


def _add_train_flags(p: argparse.ArgumentParser, variant: bool = True) -> None:
    p.add_argument("--categories", type=int, required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    if variant:
        p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.FULL.value)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-width", type=int, default=128)
    p.add_argument("--shared-head", action="store_true", help="one output head for every step")
    _add_data_flags(p)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def train_config_from_args(args: argparse.Namespace, seed: Optional[int] = None) -> TrainConfig:
    try:
        return TrainConfig(
            categories=args.categories,
            alpha=args.alpha,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed if seed is None else seed,
            variant=getattr(args, "variant", Variant.FULL.value),
            model=ModelConfig(
                width=args.width,
                layers=args.layers,
                heads=args.heads,
                ff_width=args.ff_width,
                shared_head=args.shared_head,
            ),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_bench(args: argparse.Namespace, categories: Optional[int] = None) -> SyntheticBench:
    if args.data:
        bench = resolve_data(args.data)
    else:
        if categories is None:
            raise ConfigError("--data is required")
        bench = generate(SyntheticSpec(
            categories=categories, noise=args.noise, seed=args.data_seed, index_base=args.index_base,
        ))
    if categories is not None and bench.spec.categories != categories:
        raise ConfigError(f"--categories {categories} does not match the data ({bench.spec.categories})")
    return bench


def _manifest(command: str, argv: List[str], started: float, config: Dict, **fields) -> RunManifest:
    return RunManifest(
        command=command,
        argv=list(argv),
        config=config,
        duration_seconds=time.monotonic() - started,
        torch_threads=torch.get_num_threads(),
        cwd=os.getcwd(),
        **fields,
    )


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------
def cmd_generate(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    try:
        spec = SyntheticSpec(
            categories=args.categories,
            feature_dim=args.feature_dim,
            noise=args.noise,
            train_size=args.train_size,
            val_size=args.val_size,
            test_size=args.test_size,
            imbalance=args.imbalance,
            ratio=args.ratio,
            seed=args.seed,
            index_base=args.index_base,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc

    substitutions = []
    if args.target_oracle_accuracy is not None:
        noise = noise_for_oracle_accuracy(spec, args.target_oracle_accuracy)
        substitutions.append({"field": "noise", "requested": spec.noise, "used": noise,
                              "target_oracle_accuracy": args.target_oracle_accuracy})
        spec = spec.model_copy(update={"noise": noise})

    bench = generate(spec)
    artifacts = save_dataset(args.out, bench)
    oracle = bayes_oracle(bench)
    _say(f"data n={spec.categories} sigma={spec.noise:.5f}: oracle accuracy={oracle['accuracy']:.4f} "
         f"MAE={oracle['mae']:.4f} -> {args.out}")
    write_manifest(args.out, _manifest(
        "generate", argv, started, spec.model_dump(mode="json"),
        seeds=[spec.seed], artifacts=artifacts, data_hash=hash_data_path(args.out),
        substitutions=substitutions,
    ))
    return EXIT_OK


def cmd_train(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    config = train_config_from_args(args)
    bench = load_bench(args, config.categories)
    result = run_experiment(config, bench, args.out)
    m = result.metrics
    _say(f"{m.variant} n={m.categories} alpha={m.alpha:g} seed={m.seed}: "
         f"accuracy={m.accuracy:.4f} MAE={m.mae:.4f} (best epoch {m.best_epoch})")
    write_manifest(args.out, _manifest(
        "train", argv, started, {"train": config.model_dump(mode="json"),
                                 "data": bench.spec.model_dump(mode="json")},
        seeds=[config.seed], artifacts=result.artifacts, data_hash=hash_data_path(args.data),
    ))
    return EXIT_OK


def _trained_bench(args: argparse.Namespace, trained) -> SyntheticBench:
    if args.data:
        return load_bench(args, trained.config.categories)
    spec = trained.extra.get("data_spec")
    if spec is None:
        raise ConfigError("checkpoint records no data spec; pass --data")
    return generate(SyntheticSpec(**spec))


def cmd_evaluate(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    trained = load_trained(args.checkpoint)
    bench = _trained_bench(args, trained)
    metrics = evaluate_trained(trained, bench, args.split)
    out = Path(args.out)
    artifacts = {"metrics": write_record(out / "metrics.json", metrics)}
    _say(f"{metrics.variant} on {args.split}: accuracy={metrics.accuracy:.4f} MAE={metrics.mae:.4f}")
    write_manifest(out, _manifest(
        "evaluate", argv, started, {"train": trained.config.model_dump(mode="json"),
                                    "data": bench.spec.model_dump(mode="json"), "split": args.split},
        seeds=[trained.config.seed], artifacts=artifacts, data_hash=hash_data_path(args.data),
    ))
    return EXIT_OK


def cmd_decode(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    trained = load_trained(args.checkpoint)
    bench = _trained_bench(args, trained)
    frame, records = decode_trained(trained, bench, args.split, args.limit, args.trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"predictions": atomic_write_text(out / "predictions.csv", frame.to_csv(index=False))}
    if args.trace:
        artifacts["trace"] = write_jsonl(out / "trace.jsonl", [TraceRecord(**r) for r in records])
    _say(f"decoded {len(frame)} samples from {args.split} -> {out}")
    write_manifest(out, _manifest(
        "decode", argv, started, {"train": trained.config.model_dump(mode="json"),
                                  "split": args.split, "limit": args.limit, "trace": args.trace},
        seeds=[trained.config.seed], artifacts=artifacts, data_hash=hash_data_path(args.data),
    ))
    return EXIT_OK


def cmd_sweep_alpha(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    config = train_config_from_args(args, seed=args.seeds[0])
    bench = load_bench(args, config.categories)
    rows, substitutions = sweep_alpha(config, bench, args.alphas, args.seeds, args.out)
    frame = sweep_frame(rows)
    _say(f"alpha sweep: {len(rows)} runs -> {Path(args.out) / 'sweep.csv'}")
    print(frame.groupby("alpha")[["accuracy", "mae"]].mean().to_string(), flush=True)
    write_manifest(args.out, _manifest(
        "sweep-alpha", argv, started, {"train": config.model_dump(mode="json"),
                                       "data": bench.spec.model_dump(mode="json"),
                                       "alphas": args.alphas, "workers": worker_count()},
        seeds=args.seeds, artifacts={"sweep": str(Path(args.out) / "sweep.csv")},
        data_hash=hash_data_path(args.data), substitutions=substitutions,
    ))
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    config = train_config_from_args(args, seed=args.seeds[0])
    bench = load_bench(args, config.categories)
    report = ablation(config, bench, args.seeds, args.out)

    header = f"{'variant':<18}{'accuracy':>20}{'MAE':>20}"
    print("\n" + "=" * len(header))
    print(header)
    print("-" * len(header))
    for v in report.variants:
        print(f"{v.variant:<18}{f'{v.accuracy.mean:.4f} ± {v.accuracy.std:.4f}':>20}"
              f"{f'{v.mae.mean:.4f} ± {v.mae.std:.4f}':>20}")
    print("=" * len(header), flush=True)

    write_manifest(args.out, _manifest(
        "ablation", argv, started, {"train": config.model_dump(mode="json"),
                                    "data": bench.spec.model_dump(mode="json"),
                                    "workers": worker_count()},
        seeds=args.seeds, artifacts={"ablation": str(Path(args.out) / "ablation.json")},
        data_hash=hash_data_path(args.data),
    ))
    return EXIT_OK


def cmd_report(args: argparse.Namespace, argv: List[str]) -> int:
    started = time.monotonic()
    if not args.sweep and not args.ablation:
        raise ConfigError("report needs --sweep, --ablation, or both")
    text = render_report(args.sweep, args.ablation)
    path = atomic_write_text(Path(args.out) / "report.md", text)
    print(text)
    _say(f"report -> {path}")
    write_manifest(args.out, _manifest(
        "report", argv, started, {"sweep": args.sweep, "ablation": args.ablation},
        artifacts={"report": path},
    ))
    return EXIT_OK


PATH_FLAGS = ("--data", "--checkpoint", "--sweep", "--ablation")


def flag_value(argv: List[str], flag: str) -> Optional[str]:
    """Value of `flag` in an argv list (either `--flag v` or `--flag=v`)."""
    for i, token in enumerate(argv):
        if token == flag and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith(flag + "="):
            return token[len(flag) + 1:]
    return None


def replay_argv(recorded: List[str], out: str, cwd: Optional[str] = None) -> List[str]:
    """
    The recorded argv with its --out value replaced.

    With cwd set, relative input paths are anchored there so a replay from
    another directory reads the same files.
    """
    argv, replaced, skip = [], False, False
    for i, token in enumerate(recorded):
        if skip:
            skip = False
            continue
        if token == "--out":
            argv += ["--out", out]
            replaced, skip = True, True
        elif token.startswith("--out="):
            argv.append(f"--out={out}")
            replaced = True
        elif cwd and token in PATH_FLAGS and i + 1 < len(recorded):
            argv += [token, str(Path(cwd) / recorded[i + 1])]
            skip = True
        elif cwd and token.split("=", 1)[0] in PATH_FLAGS and "=" in token:
            flag, value = token.split("=", 1)
            argv.append(f"{flag}={Path(cwd) / value}")
        else:
            argv.append(token)
    if not replaced:
        argv += ["--out", out]
    return argv


def check_replayable(manifest: RunManifest) -> None:
    """
    Raises:
        ConfigError: if the manifest comes from another tool version or its
            recorded --data no longer hashes to the recorded data_hash
    """
    if manifest.command == "replay":
        raise ConfigError("cannot replay a replay manifest")
    if manifest.tool_version != TOOL_VERSION:
        raise ConfigError(f"manifest written by ord2seq {manifest.tool_version}, this is {TOOL_VERSION}")
    data = flag_value(manifest.argv, "--data")
    if data is None or manifest.data_hash is None:
        return
    path = Path(manifest.cwd or ".") / data
    current = hash_data_path(path)
    if current != manifest.data_hash:
        raise ConfigError(
            f"data at {path} changed since the recorded run "
            f"(recorded {manifest.data_hash[:12]}, now {(current or 'missing')[:12]})"
        )


def cmd_replay(args: argparse.Namespace, argv: List[str]) -> int:
    manifest = load_manifest(args.manifest)
    check_replayable(manifest)
    replayed = replay_argv(manifest.argv, args.out, manifest.cwd)
    _say(f"replaying {manifest.command}: {' '.join(replayed)}")
    return main(replayed)


# --------------------------------------------------------------------------
# Parser and entry point
# --------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ord2seq", description="Ord2Seq ordinal regression experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        _add_common(p)
        return p

    p = command("generate", cmd_generate, "write a synthetic ordinal dataset")
    p.add_argument("--categories", type=int, required=True)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--target-oracle-accuracy", type=float,
                   help="choose the noise so the Bayes oracle reaches this test accuracy")
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--imbalance", choices=["uniform", "geometric"], default="uniform")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index-base", type=int, default=0)

    p = command("train", cmd_train, "train one variant and score the test split")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)

    for name, handler, help_text in (
        ("evaluate", cmd_evaluate, "score a checkpoint on a split"),
        ("decode", cmd_decode, "greedy-decode a split, optionally with per-step traces"),
    ):
        p = command(name, handler, help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=["train", "val", "test"], default="test")
        _add_data_flags(p)
        if name == "decode":
            p.add_argument("--trace", action="store_true", help="write trace.jsonl with every decoding step")
            p.add_argument("--limit", type=int, help="decode only the first LIMIT samples")

    p = command("sweep-alpha", cmd_sweep_alpha, "train the full variant over an alpha grid and seeds")
    _add_train_flags(p, variant=False)
    p.add_argument("--alphas", type=_float_list, default=list(DEFAULT_ALPHA_GRID),
                   help="comma-separated grid (default 0.0,...,0.9; 0 runs as 1e-6)")
    p.add_argument("--seeds", type=_int_list, default=[0])

    p = command("ablation", cmd_ablation, "compare softmax-baseline, one-shot, no-mask and full")
    _add_train_flags(p, variant=False)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])

    p = command("report", cmd_report, "render report.md from sweep.csv and ablation.json")
    p.add_argument("--sweep")
    p.add_argument("--ablation")

    p = command("replay", cmd_replay, "re-run a recorded command into a new output directory")
    p.add_argument("--manifest", required=True)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, force=True)
    torch.set_num_threads(TORCH_THREADS)

    try:
        return args.handler(args, argv)
    except NaNLossError as exc:
        print(f"ord2seq: error: {exc}; diagnostics: {exc.diagnostics_path}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, SpecError, InvalidCategoryCountError, ValidationError) as exc:
        print(f"ord2seq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.exception("%s failed", args.command)
        print(f"ord2seq: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
