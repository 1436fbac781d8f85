"""
Bayes-optimal classifier for the synthetic ordinal benchmark.

The generator is white-box: label = bucket(z + sigma * eps) with known z and
thresholds, so the posterior over buckets is a difference of Gaussian CDFs at
the bucket boundaries. Its metrics are the ceiling a learned model is held to.
"""

import logging
from typing import Dict, Literal

import numpy as np
from scipy import optimize
from scipy.stats import norm

from utils.data_loader import SyntheticBench, SyntheticSpec, bucketize, generate
from utils.errors import SpecError

logger = logging.getLogger(__name__)


def bucket_posteriors(latent: np.ndarray, thresholds: np.ndarray, noise: float) -> np.ndarray:
    """
    P(label = k | z) for every sample and bucket.

    Returns:
        (N, n) array; rows sum to 1. At noise 0 rows are one-hot.
    """
    latent = np.asarray(latent, dtype=np.float64)
    n = len(thresholds) + 1
    if noise == 0.0:
        return np.eye(n)[bucketize(latent, thresholds)]
    edges = np.concatenate([[-np.inf], thresholds, [np.inf]])
    cdf = norm.cdf((edges[None, :] - latent[:, None]) / noise)
    return np.diff(cdf, axis=1)


def posterior_decision(posteriors: np.ndarray, decision: Literal["mode", "median"] = "mode") -> np.ndarray:
    """mode: argmax posterior (accuracy-optimal). median: posterior median (MAE-optimal)."""
    if decision == "mode":
        return posteriors.argmax(axis=1)
    if decision == "median":
        cumulative = np.cumsum(posteriors, axis=1)
        return (cumulative < 0.5).sum(axis=1).clip(max=posteriors.shape[1] - 1)
    raise ValueError(f"unknown decision rule {decision!r}")


def bayes_oracle(
    bench: SyntheticBench,
    split: str = "test",
    decision: Literal["mode", "median"] = "mode",
) -> Dict:
    """
    Classify a split with the true posterior.

    Returns:
        Dictionary with accuracy, mae, expected_accuracy (mean of the max
        posterior, a smooth function of sigma) and the predictions
    """
    arrays = bench.splits[split]
    posteriors = bucket_posteriors(arrays.latent, bench.thresholds, bench.spec.noise)
    predictions = posterior_decision(posteriors, decision)
    errors = np.abs(predictions - arrays.labels)
    return {
        "accuracy": float(np.mean(errors == 0)),
        "mae": float(np.mean(errors)),
        "expected_accuracy": float(posteriors.max(axis=1).mean()),
        "decision": decision,
        "predictions": predictions,
    }


def noise_for_oracle_accuracy(
    spec: SyntheticSpec,
    target: float,
    split: str = "test",
    metric: Literal["accuracy", "expected_accuracy"] = "accuracy",
    upper: float = 0.1,
    xtol: float = 1e-6,
    max_doublings: int = 30,
) -> float:
    """
    Noise level at which the oracle's accuracy on `split` equals target.

    metric="accuracy" solves on the realised split accuracy, a step function of
    sigma; the returned level is the side of the final step closest to target.
    metric="expected_accuracy" solves on the mean max posterior, which is smooth.

    The upper bracket doubles until the accuracy drops below target, then
    Brent's method solves on the bracket.
    """
    if not 0.0 < target < 1.0:
        raise SpecError(f"target accuracy must lie in (0, 1), got {target}")

    def gap(noise: float) -> float:
        bench = generate(spec.model_copy(update={"noise": noise}))
        return bayes_oracle(bench, split=split)[metric] - target

    for _ in range(max_doublings):
        if gap(upper) < 0.0:
            break
        upper *= 2.0
    else:
        raise SpecError(f"no noise level up to {upper} brings oracle accuracy to {target}")

    noise = optimize.brentq(gap, 0.0, upper, xtol=xtol)
    if metric == "accuracy":
        candidates = [max(noise - 2 * xtol, 0.0), noise, noise + 2 * xtol]
        noise = min(candidates, key=lambda s: abs(gap(s)))
    logger.info("Oracle %s %.3f reached at sigma=%.5f", metric, target, noise)
    return float(noise)
