"""
Unit tests for the synthetic ordinal benchmark: generation, persistence,
loaders, the Bayes oracle and the softmax baseline.

Runnable two ways:
    pytest ord2seq/tests/test_databench.py
    python ord2seq/tests/test_databench.py   (no pytest required)
"""

import math
import os
import sys
import tempfile

import numpy as np
import pandas as pd
import torch

BACKEND_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if BACKEND_DIR not in sys.path:
    sys.path.insert(0, BACKEND_DIR)

from analyzers.bayes_oracle import bayes_oracle, bucket_posteriors, noise_for_oracle_accuracy
from analyzers.experiments import softmax_baseline
from models.ord2seq_model import ModelConfig
from models.trainer import TrainConfig
from utils.data_loader import (
    SyntheticSpec,
    bucketize,
    class_priors,
    generate,
    load_dataset,
    make_loaders,
    minority_category,
    resolve_data,
    save_dataset,
)
from utils.errors import SpecError
from utils.numerics import seed_everything

TINY = ModelConfig(width=8, heads=2, layers=1, ff_width=16, feature_tokens=2, encoder_hidden=8)
SMALL = {"train_size": 300, "val_size": 100, "test_size": 200}


def _raises(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type:
        return
    raise AssertionError(f"{fn.__name__} did not raise {exc_type.__name__}")


# --------------------------------------------------------------------------
# Generation
# --------------------------------------------------------------------------
def test_spec_validation():
    _raises(ValueError, SyntheticSpec, categories=1)
    _raises(ValueError, SyntheticSpec, categories=4, noise=-0.1)
    _raises(ValueError, SyntheticSpec, categories=4, ratio=0.0)
    _raises(ValueError, SyntheticSpec, categories=4, imbalance="zipf")


def test_same_seed_same_data():
    spec = SyntheticSpec(categories=6, noise=0.05, seed=3, **SMALL)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.thresholds, b.thresholds)
    for split in ("train", "val", "test"):
        assert np.array_equal(a.splits[split].features, b.splits[split].features)
        assert np.array_equal(a.splits[split].labels, b.splits[split].labels)
    c = generate(spec.model_copy(update={"seed": 4}))
    assert not np.array_equal(a.splits["train"].features, c.splits["train"].features)


def test_splits_are_distinct_streams():
    bench = generate(SyntheticSpec(categories=4, train_size=100, val_size=100, test_size=100))
    assert not np.array_equal(bench.splits["train"].features, bench.splits["val"].features)
    assert not np.array_equal(bench.splits["val"].features, bench.splits["test"].features)


def test_uniform_priors_at_scale():
    spec = SyntheticSpec(categories=5, train_size=100_000, val_size=10, test_size=10)
    counts = np.bincount(generate(spec).splits["train"].labels, minlength=5) / 100_000
    assert np.all(np.abs(counts - 0.2) <= 0.02), counts


def test_geometric_priors():
    spec = SyntheticSpec(categories=5, imbalance="geometric", ratio=0.4, train_size=50_000,
                         val_size=10, test_size=10, noise=0.1)
    priors = class_priors(spec)
    assert math.isclose(priors.sum(), 1.0)
    assert np.all(np.diff(priors) < 0)
    assert minority_category(spec) == 4
    counts = np.bincount(generate(spec).splits["train"].labels, minlength=5) / 50_000
    np.testing.assert_allclose(counts, priors, atol=0.02)


def test_labels_monotone_in_latent_without_noise():
    bench = generate(SyntheticSpec(categories=7, **SMALL))
    train = bench.splits["train"]
    order = np.argsort(train.latent, kind="mergesort")
    assert np.all(np.diff(train.labels[order]) >= 0)
    assert np.array_equal(train.labels, bucketize(train.latent, bench.thresholds))


def test_impossible_priors_raise_spec_error():
    spec = SyntheticSpec(categories=6, imbalance="geometric", ratio=0.1, train_size=100)
    _raises(SpecError, generate, spec)


# --------------------------------------------------------------------------
# Persistence and loaders
# --------------------------------------------------------------------------
def test_csv_round_trip_with_index_base():
    bench = generate(SyntheticSpec(categories=4, noise=0.1, index_base=1, **SMALL))
    with tempfile.TemporaryDirectory() as tmp:
        paths = save_dataset(tmp, bench)
        assert set(paths) == {"train", "val", "test", "spec"}
        with open(paths["train"]) as f:
            header = f.readline().strip().split(",")
        assert header == [f"f{i}" for i in range(8)] + ["label", "latent"]
        loaded = load_dataset(tmp)
        assert loaded.spec == bench.spec
        assert np.array_equal(loaded.thresholds, bench.thresholds)
        for split in ("train", "val", "test"):
            assert np.array_equal(loaded.splits[split].labels, bench.splits[split].labels)
            assert np.array_equal(loaded.splits[split].features, bench.splits[split].features)
        assert np.array_equal(resolve_data(tmp).splits["test"].labels, bench.splits["test"].labels)


def test_saved_dataset_matches_regeneration_bit_for_bit():
    bench = generate(SyntheticSpec(categories=5, noise=0.37, index_base=1, **SMALL))
    with tempfile.TemporaryDirectory() as tmp:
        save_dataset(tmp, bench)
        loaded = load_dataset(tmp)
        raw = pd.read_csv(os.path.join(tmp, "train.csv"))
    again = generate(loaded.spec)
    for split in ("train", "val", "test"):
        assert np.array_equal(loaded.splits[split].features, again.splits[split].features), split
        assert np.array_equal(loaded.splits[split].latent, again.splits[split].latent), split
        assert np.array_equal(loaded.splits[split].labels, again.splits[split].labels), split
    assert raw["label"].min() == 1 and raw["label"].max() == 5
    assert np.array_equal(raw["label"].to_numpy() - 1, bench.splits["train"].labels)


def test_resolve_data_from_spec_file():
    spec = SyntheticSpec(categories=3, **SMALL)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "spec.json")
        with open(path, "w") as f:
            f.write(spec.model_dump_json())
        bench = resolve_data(path)
    assert bench.spec == spec
    assert np.array_equal(bench.splits["train"].labels, generate(spec).splits["train"].labels)


def test_loaders_standardize_on_train_and_shuffle_only_train():
    bench = generate(SyntheticSpec(categories=4, **SMALL))
    data = make_loaders(bench, batch_size=50, generator=seed_everything(0))
    X = torch.cat([bx for bx, _ in data["train_loader"]])
    np.testing.assert_allclose(X.mean(dim=0).numpy(), 0.0, atol=1e-12)
    assert X.dtype == torch.float64
    first = torch.cat([by for _, by in data["test_loader"]])
    assert np.array_equal(first.numpy(), bench.splits["test"].labels)
    assert data["sizes"] == {"train": 300, "val": 100, "test": 200}


# --------------------------------------------------------------------------
# Bayes oracle
# --------------------------------------------------------------------------
def test_oracle_perfect_without_noise():
    bench = generate(SyntheticSpec(categories=8, **SMALL))
    out = bayes_oracle(bench)
    assert out["accuracy"] == 1.0 and out["mae"] == 0.0


def test_oracle_approaches_max_prior_under_huge_noise():
    spec = SyntheticSpec(categories=4, imbalance="geometric", ratio=0.5, noise=1e4,
                         train_size=2000, val_size=10, test_size=20_000)
    out = bayes_oracle(generate(spec))
    assert abs(out["accuracy"] - class_priors(spec).max()) < 0.02


def test_posteriors_match_numeric_integration():
    thresholds = np.array([-0.5, 0.0, 0.7])
    z, sigma = np.array([0.1]), 0.3
    post = bucket_posteriors(z, thresholds, sigma)[0]
    grid = np.linspace(-6, 6, 2_000_001)
    density = np.exp(-0.5 * (grid / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
    buckets = bucketize(z[0] + grid, thresholds)
    step = grid[1] - grid[0]
    numeric = np.array([density[buckets == k].sum() * step for k in range(4)])
    np.testing.assert_allclose(post, numeric, atol=1e-4)
    assert math.isclose(post.sum(), 1.0)


def test_median_rule_never_worse_on_mae():
    bench = generate(SyntheticSpec(categories=8, noise=0.15, train_size=500, val_size=10, test_size=5000))
    mode = bayes_oracle(bench, decision="mode")
    median = bayes_oracle(bench, decision="median")
    assert median["mae"] <= mode["mae"] + 0.02
    assert mode["accuracy"] >= median["accuracy"] - 0.02


def test_noise_calibration_hits_target():
    spec = SyntheticSpec(categories=8, train_size=500, val_size=10, test_size=2000)
    sigma = noise_for_oracle_accuracy(spec, 0.85)
    assert sigma > 0
    out = bayes_oracle(generate(spec.model_copy(update={"noise": sigma})))
    assert abs(out["accuracy"] - 0.85) < 5e-3


def test_noise_calibration_on_other_split_and_seed():
    spec = SyntheticSpec(categories=8, seed=11, train_size=500, val_size=1000, test_size=10)
    sigma = noise_for_oracle_accuracy(spec, 0.85, split="val")
    out = bayes_oracle(generate(spec.model_copy(update={"noise": sigma})), split="val")
    assert abs(out["accuracy"] - 0.85) < 0.02


def test_noise_calibration_on_expected_accuracy():
    spec = SyntheticSpec(categories=8, train_size=500, val_size=10, test_size=2000)
    sigma = noise_for_oracle_accuracy(spec, 0.85, metric="expected_accuracy")
    out = bayes_oracle(generate(spec.model_copy(update={"noise": sigma})))
    assert abs(out["expected_accuracy"] - 0.85) < 5e-3


# --------------------------------------------------------------------------
# Softmax baseline
# --------------------------------------------------------------------------
def test_softmax_baseline_deterministic():
    bench = generate(SyntheticSpec(categories=3, **SMALL))
    config = TrainConfig(categories=3, epochs=2, batch_size=64, lr=1e-3, model=TINY)
    a = softmax_baseline(config, bench)
    b = softmax_baseline(config, bench)
    assert a.metrics.variant == "softmax-baseline"
    assert a.metrics.model_dump() == b.metrics.model_dump()
    assert 0.0 <= a.metrics.accuracy <= 1.0 and 0.0 <= a.metrics.mae <= 2.0


# --------------------------------------------------------------------------
# Standalone runner (no pytest dependency)
# --------------------------------------------------------------------------
if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_") and callable(v)]
    passed = 0
    for t in tests:
        try:
            t()
            print(f"PASS  {t.__name__}")
            passed += 1
        except Exception as e:
            print(f"FAIL  {t.__name__}: {e}")
    print(f"\n{passed}/{len(tests)} tests passed")
    sys.exit(0 if passed == len(tests) else 1)
