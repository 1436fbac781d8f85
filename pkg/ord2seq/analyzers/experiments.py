"""
Experiment orchestration shared by the CLI and the acceptance tests:
single training runs, the alpha sweep, the variant ablation, and reloading
trained checkpoints for evaluation and decoding.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from sklearn.preprocessing import StandardScaler

from analyzers.bayes_oracle import bayes_oracle
from analyzers.ordinal_metrics import evaluate, summarize_runs
from models.ord2seq_model import Ord2SeqModel, trace_records
from models.trainer import Trainer, TrainConfig, Variant, build_model
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.data_loader import SyntheticBench, make_loaders, restore_scaler, scaler_state
from utils.dichotomic_tree import to_external
from utils.errors import ConfigError, PartialResultError
from utils.manifest import (
    AblationReport,
    AdjacencyRow,
    EpochRecord,
    MeanStd,
    MetricsReport,
    RunSummary,
    SweepRow,
    VariantSummary,
    write_jsonl,
    write_record,
)
from utils.numerics import seed_everything

logger = logging.getLogger(__name__)

ABLATION_VARIANTS = (Variant.SOFTMAX_BASELINE, Variant.ONE_SHOT, Variant.NO_MASK, Variant.FULL)
DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(10))
# alpha = 0 zeroes eliminated probabilities and leaves their BCE terms undefined
ALPHA_FLOOR = 1e-6
TORCH_THREADS = 1


@dataclass
class ExperimentResult:
    metrics: MetricsReport
    epochs: List[EpochRecord]
    model: nn.Module
    scaler: StandardScaler
    artifacts: Dict[str, str] = field(default_factory=dict)


def worker_count() -> int:
    """Worker processes for sweep and ablation, from ORD2SEQ_THREADS (default 1)."""
    raw = os.environ.get("ORD2SEQ_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"ORD2SEQ_THREADS must be an integer, got {raw!r}")
    if workers < 1:
        raise ConfigError(f"ORD2SEQ_THREADS must be >= 1, got {workers}")
    return workers


def run_experiment(
    config: TrainConfig,
    bench: SyntheticBench,
    out_dir: Optional[Union[str, Path]] = None,
    keep_checkpoint: bool = True,
) -> ExperimentResult:
    """
    Train one variant, restore its best validation-MAE state and score the test split.

    Writes metrics.json, log.jsonl and checkpoint.json to out_dir when given.
    """
    if bench.spec.categories != config.categories:
        raise ConfigError(
            f"config has {config.categories} categories, data has {bench.spec.categories}"
        )
    torch.set_num_threads(TORCH_THREADS)
    generator = seed_everything(config.seed)
    data = make_loaders(bench, batch_size=config.batch_size, generator=generator)
    model = build_model(config)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(model, config, diagnostics_dir=out_dir)
    history = trainer.train(data["train_loader"], data["val_loader"])

    scores = evaluate(model, data["test_loader"], config.categories)
    oracle = bayes_oracle(bench, split="test")
    metrics = MetricsReport(
        variant=config.variant.value,
        categories=config.categories,
        alpha=config.effective_alpha,
        seed=config.seed,
        accuracy=scores["accuracy"],
        mae=scores["mae"],
        confusion_matrix=scores["confusion_matrix"],
        adjacency=scores["adjacency"],
        best_epoch=history["best_epoch"],
        parameter_count=sum(p.numel() for p in model.parameters()),
        oracle_accuracy=oracle["accuracy"],
        oracle_mae=oracle["mae"],
    )
    epochs = [EpochRecord(**r) for r in history["epochs"]]
    result = ExperimentResult(metrics=metrics, epochs=epochs, model=model, scaler=data["scaler"])

    if out_dir is not None:
        result.artifacts["metrics"] = write_record(out_dir / "metrics.json", metrics)
        result.artifacts["log"] = write_jsonl(out_dir / "log.jsonl", epochs)
        if keep_checkpoint:
            extra = {
                "scaler": scaler_state(data["scaler"]),
                "data_spec": bench.spec.model_dump(mode="json"),
                "best_epoch": history["best_epoch"],
            }
            if isinstance(model, Ord2SeqModel):
                extra["tree"] = model.tree.to_dict()
            result.artifacts["checkpoint"] = save_checkpoint(
                out_dir / "checkpoint.json", model, config.model_dump(mode="json"), extra
            )

    logger.info("%s seed=%d: test accuracy=%.4f MAE=%.4f (oracle %.4f / %.4f)",
                config.variant.value, config.seed, metrics.accuracy, metrics.mae,
                oracle["accuracy"], oracle["mae"])
    return result


def softmax_baseline(
    config: TrainConfig,
    bench: SyntheticBench,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentResult:
    """Flat n-way classifier on the same encoder, trained with cross-entropy."""
    return run_experiment(config.model_copy(update={"variant": Variant.SOFTMAX_BASELINE}), bench, out_dir)


# --------------------------------------------------------------------------
# Multi-run jobs (in-process or in a process pool)
# --------------------------------------------------------------------------
def _run_job(job: Dict) -> Dict:
    """Top-level so it pickles into worker processes; errors come back as strings."""
    try:
        config = TrainConfig(**job["config"])
        result = run_experiment(config, job["bench"], job.get("out_dir"), keep_checkpoint=False)
        return {"metrics": result.metrics.model_dump(mode="json")}
    except Exception as exc:
        logger.error("Job %s failed: %s", job.get("name"), exc)
        return {"error": f"{type(exc).__name__}: {exc}"}


def run_jobs(jobs: List[Dict], workers: Optional[int] = None) -> List[Dict]:
    """Results in job order. Each job owns its output directory."""
    workers = workers or worker_count()
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs)), mp_context=get_context("spawn")) as pool:
        return list(pool.map(_run_job, jobs))


def sweep_alpha(
    base: TrainConfig,
    bench: SyntheticBench,
    alphas: Sequence[float] = DEFAULT_ALPHA_GRID,
    seeds: Sequence[int] = (0,),
    out_dir: Optional[Union[str, Path]] = None,
) -> Tuple[List[SweepRow], List[Dict]]:
    """
    Train the full variant for every (alpha, seed) pair.

    Returns:
        (rows sorted by (alpha, seed), substitutions applied to the grid)
    """
    if not alphas:
        raise ConfigError("alpha grid is empty")
    if not seeds:
        raise ConfigError("no seeds given")
    bad = [a for a in alphas if not 0.0 <= a <= 1.0]
    if bad:
        raise ConfigError(f"alpha grid values outside [0, 1]: {bad}")

    substitutions = []
    if any(a == 0.0 for a in alphas):
        substitutions.append({"field": "alpha", "requested": 0.0, "used": ALPHA_FLOOR})

    pairs = [(float(a), int(s)) for a in sorted(set(alphas)) for s in sorted(set(seeds))]
    jobs = []
    for alpha, seed in pairs:
        config = base.model_copy(update={
            "alpha": alpha if alpha > 0.0 else ALPHA_FLOOR,
            "seed": seed,
            "variant": Variant.FULL,
        })
        run_dir = str(Path(out_dir) / "runs" / f"alpha_{alpha:.2f}_seed_{seed}") if out_dir else None
        jobs.append({"name": f"alpha={alpha} seed={seed}", "config": config.model_dump(mode="json"),
                     "bench": bench, "out_dir": run_dir})

    rows = []
    for (alpha, seed), job, outcome in zip(pairs, jobs, run_jobs(jobs)):
        if "error" in outcome:
            raise RuntimeError(f"sweep run {job['name']} failed: {outcome['error']}")
        m = outcome["metrics"]
        rows.append(SweepRow(alpha=alpha, seed=seed, accuracy=m["accuracy"], mae=m["mae"]))

    if out_dir is not None:
        sweep_frame(rows).to_csv(Path(out_dir) / "sweep.csv", index=False)
    return rows, substitutions


def sweep_frame(rows: List[SweepRow]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in rows], columns=["alpha", "seed", "accuracy", "mae"])
    return frame.sort_values(["alpha", "seed"], kind="mergesort").reset_index(drop=True)


def mean_adjacency(runs: List[RunSummary], num_categories: int) -> List[AdjacencyRow]:
    """Per-category mean of the run proportions over runs where the category has support."""
    rows = []
    for c in range(num_categories):
        present = [r.adjacency[c] for r in runs if r.adjacency[c].support > 0]
        support = sum(a.support for a in present)
        if not present:
            rows.append(AdjacencyRow(category=c, support=0))
            continue
        rows.append(AdjacencyRow(
            category=c,
            support=support,
            correct=float(np.mean([a.correct for a in present])),
            adjacent=float(np.mean([a.adjacent for a in present])),
            other=float(np.mean([a.other for a in present])),
        ))
    return rows


def ablation(
    base: TrainConfig,
    bench: SyntheticBench,
    seeds: Sequence[int],
    out_dir: Optional[Union[str, Path]] = None,
    variants: Sequence[Variant] = ABLATION_VARIANTS,
) -> AblationReport:
    """
    Train every variant over the same seeds and data.

    Writes ablation.json to out_dir, including a partial report when a run fails.

    Raises:
        PartialResultError: listing the variants whose runs all completed
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3 or len(set(seeds)) != len(seeds):
        raise ConfigError(f"ablation needs at least 3 distinct seeds, got {seeds}")

    jobs = []
    for variant in variants:
        for seed in seeds:
            config = base.model_copy(update={"variant": Variant(variant), "seed": seed})
            run_dir = str(Path(out_dir) / "runs" / f"{Variant(variant).value}_seed_{seed}") if out_dir else None
            jobs.append({"name": f"{Variant(variant).value} seed={seed}", "variant": Variant(variant),
                         "seed": seed, "config": config.model_dump(mode="json"),
                         "bench": bench, "out_dir": run_dir})
    outcomes = run_jobs(jobs)

    summaries, completed, failures = [], [], []
    for variant in variants:
        variant = Variant(variant)
        mine = [(job, out) for job, out in zip(jobs, outcomes) if job["variant"] == variant]
        errors = [f"{job['name']}: {out['error']}" for job, out in mine if "error" in out]
        if errors:
            failures.extend(errors)
            continue
        runs = [
            RunSummary(seed=job["seed"], accuracy=out["metrics"]["accuracy"],
                       mae=out["metrics"]["mae"], adjacency=out["metrics"]["adjacency"])
            for job, out in mine
        ]
        summaries.append(VariantSummary(
            variant=variant.value,
            accuracy=MeanStd(**summarize_runs(r.accuracy for r in runs)),
            mae=MeanStd(**summarize_runs(r.mae for r in runs)),
            adjacency=mean_adjacency(runs, base.categories),
            runs=runs,
        ))
        completed.append(variant.value)

    report = AblationReport(
        categories=base.categories,
        alpha=base.alpha,
        seeds=seeds,
        complete=not failures,
        completed=completed,
        failed="; ".join(failures) or None,
        variants=summaries,
    )
    if out_dir is not None:
        write_record(Path(out_dir) / "ablation.json", report)
    if failures:
        raise PartialResultError(f"ablation failed ({failures[0]})", completed)
    return report


# --------------------------------------------------------------------------
# Trained checkpoints
# --------------------------------------------------------------------------
@dataclass
class TrainedModel:
    model: nn.Module
    config: TrainConfig
    scaler: StandardScaler
    extra: Dict


def load_trained(path: Union[str, Path]) -> TrainedModel:
    """Rebuild a model from checkpoint.json written by run_experiment."""
    ckpt = load_checkpoint(path)
    config = TrainConfig(**ckpt["config"])
    model = build_model(config)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    extra = ckpt["extra"]
    if "scaler" not in extra:
        raise ConfigError(f"{path} carries no feature scaler")
    return TrainedModel(model=model, config=config, scaler=restore_scaler(extra["scaler"]), extra=extra)


def evaluate_trained(trained: TrainedModel, bench: SyntheticBench, split: str = "test") -> MetricsReport:
    if bench.spec.categories != trained.config.categories:
        raise ConfigError(
            f"checkpoint has {trained.config.categories} categories, data has {bench.spec.categories}"
        )
    loaders = make_loaders(bench, trained.config.batch_size, scaler=trained.scaler)
    scores = evaluate(trained.model, loaders[f"{split}_loader"], trained.config.categories)
    oracle = bayes_oracle(bench, split=split)
    return MetricsReport(
        variant=trained.config.variant.value,
        categories=trained.config.categories,
        alpha=trained.config.effective_alpha,
        seed=trained.config.seed,
        split=split,
        accuracy=scores["accuracy"],
        mae=scores["mae"],
        confusion_matrix=scores["confusion_matrix"],
        adjacency=scores["adjacency"],
        best_epoch=trained.extra.get("best_epoch"),
        parameter_count=sum(p.numel() for p in trained.model.parameters()),
        oracle_accuracy=oracle["accuracy"],
        oracle_mae=oracle["mae"],
    )


@torch.no_grad()
def decode_trained(
    trained: TrainedModel,
    bench: SyntheticBench,
    split: str = "test",
    limit: Optional[int] = None,
    trace: bool = False,
) -> Tuple[pd.DataFrame, List[Dict]]:
    """
    Greedy-decode a split.

    Returns:
        (predictions frame with sample,label,prediction in external indexing,
         per-step trace records when trace is set)
    """
    if trace and not isinstance(trained.model, Ord2SeqModel):
        raise ConfigError(f"--trace needs an Ord2Seq checkpoint, got variant {trained.config.variant.value}")
    arrays = bench.splits[split]
    count = len(arrays) if limit is None else min(limit, len(arrays))
    X = torch.as_tensor(trained.scaler.transform(arrays.features[:count]))
    base = bench.spec.index_base

    records: List[Dict] = []
    if isinstance(trained.model, Ord2SeqModel):
        result = trained.model.greedy_decode(X)
        predictions = result.categories.numpy()
        if trace:
            records = trace_records(result)
    else:
        predictions = trained.model.predict(X).numpy()

    frame = pd.DataFrame({
        "sample": np.arange(count),
        "label": to_external(arrays.labels[:count], base),
        "prediction": to_external(predictions, base),
    })
    return frame, records
