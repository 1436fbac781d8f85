"""
Ordinal evaluation: accuracy, MAE, confusion matrix and the per-category
breakdown of predictions into correct, adjacent (|error| = 1) and other.
"""

from typing import Dict, Iterable, List, Optional

import numpy as np
import torch
from sklearn.metrics import accuracy_score, confusion_matrix, mean_absolute_error


def adjacency_rows(cm: np.ndarray) -> List[Dict]:
    """
    One row per true category: proportions of its predictions that are correct,
    adjacent or further off. Proportions are None for categories with no support.
    """
    n = cm.shape[0]
    rows = []
    for c in range(n):
        support = int(cm[c].sum())
        if support == 0:
            rows.append({"category": c, "support": 0, "correct": None, "adjacent": None, "other": None})
            continue
        correct = cm[c, c]
        adjacent = (cm[c, c - 1] if c > 0 else 0) + (cm[c, c + 1] if c < n - 1 else 0)
        rows.append({
            "category": c,
            "support": support,
            "correct": float(correct / support),
            "adjacent": float(adjacent / support),
            "other": float((support - correct - adjacent) / support),
        })
    return rows


def ordinal_metrics(y_true, y_pred, num_categories: int) -> Dict:
    """
    Args:
        y_true: True 0-indexed categories
        y_pred: Predicted 0-indexed categories
        num_categories: n, fixes the confusion-matrix size

    Returns:
        Dictionary with accuracy, mae, confusion_matrix and adjacency rows
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label and prediction counts differ: {y_true.shape} vs {y_pred.shape}")

    cm = confusion_matrix(y_true, y_pred, labels=np.arange(num_categories))
    return {
        "accuracy": float(accuracy_score(y_true, y_pred)),
        "mae": float(mean_absolute_error(y_true, y_pred)),
        "confusion_matrix": cm.tolist(),
        "adjacency": adjacency_rows(cm),
    }


@torch.no_grad()
def predict_loader(model, loader) -> Dict[str, np.ndarray]:
    model.eval()
    labels, predictions = [], []
    for batch_X, batch_y in loader:
        predictions.append(model.predict(batch_X).cpu().numpy())
        labels.append(batch_y.cpu().numpy())
    if not labels:
        raise ValueError("cannot evaluate an empty dataset")
    return {"labels": np.concatenate(labels), "predictions": np.concatenate(predictions)}


def evaluate(model, loader, num_categories: Optional[int] = None) -> Dict:
    """Run model.predict over a loader and score it."""
    num_categories = num_categories or model.num_categories
    out = predict_loader(model, loader)
    return ordinal_metrics(out["labels"], out["predictions"], num_categories)


def minority_correct(metrics: Dict, category: int) -> Optional[float]:
    return metrics["adjacency"][category]["correct"]


def summarize_runs(values: Iterable[float]) -> Dict[str, float]:
    """Mean and sample standard deviation (ddof=1; 0 for a single run)."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("no runs to summarize")
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(values.mean()), "std": std}
