"""
Synthetic ordinal data: generation, CSV persistence, and torch loaders.

Features x ~ U[0,1]^f, latent z = w.x with a fixed random unit vector w,
label = bucket of z + N(0, sigma^2) under thresholds placed at the quantiles
of the noisy score so class priors follow the imbalance profile.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Literal, Optional, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field
from sklearn.preprocessing import StandardScaler
from torch.utils.data import DataLoader, Dataset

from utils.checkpoint import write_json
from utils.dichotomic_tree import from_external, to_external
from utils.errors import SpecError
from utils.numerics import DTYPE

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CALIBRATION_SAMPLES = 200_000
SPEC_SIDECAR = "spec.json"


class SyntheticSpec(BaseModel):
    categories: int = Field(..., ge=2)
    feature_dim: int = Field(8, ge=1)
    noise: float = Field(0.0, ge=0.0)
    train_size: int = Field(2000, ge=1)
    val_size: int = Field(500, ge=1)
    test_size: int = Field(1000, ge=1)
    imbalance: Literal["uniform", "geometric"] = "uniform"
    ratio: float = Field(1.0, gt=0.0, le=1.0)
    seed: int = 0
    index_base: int = 0

    def split_size(self, split: str) -> int:
        return {"train": self.train_size, "val": self.val_size, "test": self.test_size}[split]


@dataclass
class SplitArrays:
    features: np.ndarray   # (N, f)
    labels: np.ndarray     # (N,) int64, 0-indexed
    latent: np.ndarray     # (N,) noise-free score z

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SyntheticBench:
    """Generated dataset together with the white-box parameters of its generator."""

    spec: SyntheticSpec
    weights: np.ndarray
    thresholds: np.ndarray
    splits: Dict[str, SplitArrays] = field(default_factory=dict)


class OrdinalDataset(Dataset):
    """PyTorch Dataset of (features, label) pairs in float64 / int64."""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = torch.tensor(X, dtype=DTYPE)
        self.y = torch.tensor(y, dtype=torch.long)

    def __len__(self):
        return len(self.X)

    def __getitem__(self, idx):
        return self.X[idx], self.y[idx]


def class_priors(spec: SyntheticSpec) -> np.ndarray:
    """Uniform, or geometric p_k proportional to ratio**k."""
    if spec.imbalance == "uniform":
        return np.full(spec.categories, 1.0 / spec.categories)
    weights = spec.ratio ** np.arange(spec.categories, dtype=np.float64)
    return weights / weights.sum()


def minority_category(spec: SyntheticSpec) -> int:
    """Category with the smallest prior (the last one wins ties)."""
    priors = class_priors(spec)
    return int(len(priors) - 1 - np.argmin(priors[::-1]))


def bucketize(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Number of thresholds <= score; monotone non-decreasing in the score."""
    return np.searchsorted(thresholds, scores, side="right").astype(np.int64)


def generate(spec: SyntheticSpec) -> SyntheticBench:
    """
    Draw train/val/test splits from independent child streams of spec.seed.

    Raises:
        SpecError: if the priors leave a category empty in the train split
    """
    priors = class_priors(spec)
    expected = priors * spec.train_size
    if (expected < 1.0).any():
        empty = np.flatnonzero(expected < 1.0).tolist()
        raise SpecError(
            f"priors {np.round(priors, 6).tolist()} leave categories {empty} empty "
            f"at train_size={spec.train_size}"
        )

    generator_ss, *split_ss = np.random.SeedSequence(spec.seed).spawn(1 + len(SPLITS))
    rng = np.random.default_rng(generator_ss)
    weights = rng.standard_normal(spec.feature_dim)
    weights /= np.linalg.norm(weights)

    x_cal = rng.uniform(size=(CALIBRATION_SAMPLES, spec.feature_dim))
    z_cal = x_cal @ weights + spec.noise * rng.standard_normal(CALIBRATION_SAMPLES)
    thresholds = np.quantile(z_cal, np.cumsum(priors)[:-1])

    bench = SyntheticBench(spec=spec, weights=weights, thresholds=thresholds)
    for split, ss in zip(SPLITS, split_ss):
        split_rng = np.random.default_rng(ss)
        size = spec.split_size(split)
        X = split_rng.uniform(size=(size, spec.feature_dim))
        latent = X @ weights
        noisy = latent + spec.noise * split_rng.standard_normal(size)
        bench.splits[split] = SplitArrays(X, bucketize(noisy, thresholds), latent)

    counts = np.bincount(bench.splits["train"].labels, minlength=spec.categories)
    if (counts == 0).any():
        raise SpecError(f"categories {np.flatnonzero(counts == 0).tolist()} are empty in the train split")
    logger.info("Generated synthetic data: n=%d sigma=%.4g train counts=%s",
                spec.categories, spec.noise, counts.tolist())
    return bench


# --------------------------------------------------------------------------
# Persistence: one CSV per split plus a JSON spec sidecar
# --------------------------------------------------------------------------
def save_dataset(directory: Union[str, Path], bench: SyntheticBench) -> Dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = bench.spec
    paths = {}
    for split, arrays in bench.splits.items():
        df = pd.DataFrame(arrays.features, columns=[f"f{i}" for i in range(spec.feature_dim)])
        df["label"] = to_external(arrays.labels, spec.index_base)
        df["latent"] = arrays.latent
        path = directory / f"{split}.csv"
        df.to_csv(path, index=False, float_format="%.17g")
        paths[split] = str(path)
    sidecar = {
        "spec": spec.model_dump(mode="json"),
        "weights": bench.weights.tolist(),
        "thresholds": bench.thresholds.tolist(),
    }
    paths["spec"] = write_json(directory / SPEC_SIDECAR, sidecar)
    return paths


def load_dataset(directory: Union[str, Path]) -> SyntheticBench:
    directory = Path(directory)
    with open(directory / SPEC_SIDECAR, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    spec = SyntheticSpec(**sidecar["spec"])
    bench = SyntheticBench(
        spec=spec,
        weights=np.asarray(sidecar["weights"], dtype=np.float64),
        thresholds=np.asarray(sidecar["thresholds"], dtype=np.float64),
    )
    feature_columns = [f"f{i}" for i in range(spec.feature_dim)]
    for split in SPLITS:
        df = pd.read_csv(directory / f"{split}.csv", float_precision="round_trip")
        labels = from_external(df["label"].to_numpy(dtype=np.int64), spec.index_base)
        if labels.min() < 0 or labels.max() >= spec.categories:
            raise SpecError(f"{split}.csv has labels outside [0, {spec.categories - 1}] after index base")
        bench.splits[split] = SplitArrays(
            df[feature_columns].to_numpy(dtype=np.float64),
            labels,
            df["latent"].to_numpy(dtype=np.float64),
        )
    return bench


def load_spec(path: Union[str, Path]) -> SyntheticSpec:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return SyntheticSpec(**doc.get("spec", doc))


def resolve_data(path: Union[str, Path]) -> SyntheticBench:
    """A dataset directory is loaded from CSV; a spec JSON file is generated in memory."""
    path = Path(path)
    if path.is_dir():
        return load_dataset(path)
    return generate(load_spec(path))


# --------------------------------------------------------------------------
# Loaders
# --------------------------------------------------------------------------
def scaler_state(scaler: StandardScaler) -> Dict:
    return {"mean": scaler.mean_.tolist(), "scale": scaler.scale_.tolist()}


def restore_scaler(state: Dict) -> StandardScaler:
    scaler = StandardScaler()
    scaler.mean_ = np.asarray(state["mean"], dtype=np.float64)
    scaler.scale_ = np.asarray(state["scale"], dtype=np.float64)
    scaler.var_ = scaler.scale_ ** 2
    scaler.n_features_in_ = len(scaler.mean_)
    scaler.n_samples_seen_ = 0
    return scaler


def make_loaders(
    bench: SyntheticBench,
    batch_size: int = 32,
    generator: Optional[torch.Generator] = None,
    scaler: Optional[StandardScaler] = None,
) -> Dict:
    """
    Standardize features (scaler fitted on train unless given) and wrap each split.

    Returns:
        Dictionary with train/val/test loaders, the fitted scaler and split sizes
    """
    if scaler is None:
        scaler = StandardScaler().fit(bench.splits["train"].features)

    loaders = {}
    for split in SPLITS:
        arrays = bench.splits[split]
        dataset = OrdinalDataset(scaler.transform(arrays.features), arrays.labels)
        shuffle = split == "train"
        loaders[f"{split}_loader"] = DataLoader(
            dataset,
            batch_size=batch_size,
            shuffle=shuffle,
            generator=generator if shuffle else None,
        )

    return {
        **loaders,
        "scaler": scaler,
        "input_dim": bench.spec.feature_dim,
        "num_classes": bench.spec.categories,
        "sizes": {split: len(bench.splits[split]) for split in SPLITS},
    }
