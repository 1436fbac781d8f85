"""
Markdown report from sweep.csv and ablation.json.
"""

import json
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd

from utils.manifest import AblationReport


def alpha_curve(sweep: pd.DataFrame) -> pd.DataFrame:
    """Mean and sample std of accuracy and MAE per alpha, sorted by alpha."""
    grouped = sweep.groupby("alpha", sort=True)
    curve = grouped.agg(
        runs=("seed", "count"),
        accuracy_mean=("accuracy", "mean"),
        accuracy_std=("accuracy", "std"),
        mae_mean=("mae", "mean"),
        mae_std=("mae", "std"),
    )
    return curve.fillna(0.0).reset_index()


def best_alpha(curve: pd.DataFrame) -> float:
    """Alpha with the lowest mean MAE (smallest alpha wins ties)."""
    return float(curve.sort_values(["mae_mean", "alpha"], kind="mergesort").iloc[0]["alpha"])


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _table(header: List[str], rows: List[List[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def render_report(
    sweep_path: Optional[Union[str, Path]] = None,
    ablation_path: Optional[Union[str, Path]] = None,
) -> str:
    if sweep_path is None and ablation_path is None:
        raise ValueError("report needs a sweep CSV, an ablation JSON, or both")

    lines = ["# Ord2Seq experiment report", ""]

    if sweep_path is not None:
        curve = alpha_curve(pd.read_csv(sweep_path))
        lines += ["## Alpha sweep", ""]
        lines += _table(
            ["alpha", "runs", "accuracy", "MAE"],
            [
                [f"{r.alpha:g}", str(int(r.runs)),
                 f"{r.accuracy_mean:.4f} ± {r.accuracy_std:.4f}",
                 f"{r.mae_mean:.4f} ± {r.mae_std:.4f}"]
                for r in curve.itertuples()
            ],
        )
        lines += ["", f"Lowest mean MAE at alpha = {best_alpha(curve):g}.", ""]

    if ablation_path is not None:
        with open(ablation_path, "r", encoding="utf-8") as f:
            report = AblationReport(**json.load(f))
        lines += ["## Ablation", "", f"n = {report.categories}, alpha = {report.alpha:g}, "
                  f"seeds = {', '.join(map(str, report.seeds))}", ""]
        if not report.complete:
            lines += [f"**Partial result.** Failed: {report.failed}", ""]
        lines += _table(
            ["variant", "accuracy", "MAE"],
            [
                [v.variant, f"{v.accuracy.mean:.4f} ± {v.accuracy.std:.4f}",
                 f"{v.mae.mean:.4f} ± {v.mae.std:.4f}"]
                for v in report.variants
            ],
        )
        for v in report.variants:
            lines += ["", f"### Prediction breakdown: {v.variant}", ""]
            lines += _table(
                ["category", "support", "correct", "adjacent", "other"],
                [
                    [str(a.category), str(a.support), _fmt(a.correct), _fmt(a.adjacent), _fmt(a.other)]
                    for a in v.adjacency
                ],
            )
        lines.append("")

    return "\n".join(lines)
