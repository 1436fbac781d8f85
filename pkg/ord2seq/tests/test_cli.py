"""
Tests for the command-line surface: exit codes, output files validated through
their record models, schema agreement, replay and multi-run commands.

Runnable two ways:
    pytest ord2seq/tests/test_cli.py
    python ord2seq/tests/test_cli.py   (no pytest required)
"""

import contextlib
import io
import json
import os
import sys
import tempfile

import pandas as pd

BACKEND_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if BACKEND_DIR not in sys.path:
    sys.path.insert(0, BACKEND_DIR)

import analyzers.experiments as experiments
from cli import EXIT_NAN, EXIT_OK, EXIT_USAGE, flag_value, main, replay_argv
from models.ord2seq_model import ModelConfig
from models.trainer import TrainConfig
from utils.data_loader import load_dataset
from utils.errors import PartialResultError
from utils.manifest import (
    OUTPUT_MODELS,
    AblationReport,
    EpochRecord,
    MetricsReport,
    RunManifest,
    TraceRecord,
    load_schema,
)


def tiny_flags(epochs=2):
    return ["--epochs", str(epochs), "--batch-size", "50", "--width", "8", "--heads", "2",
            "--layers", "1", "--ff-width", "16", "--log-level", "WARNING"]


TINY_FLAGS = tiny_flags()


def _run(argv):
    """main() with stdout/stderr captured; returns (code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def _make_data(tmp, categories=5, extra=()):
    path = os.path.join(tmp, "data")
    code, _, _ = _run(["generate", "--categories", str(categories), "--noise", "0.05",
                       "--train-size", "200", "--val-size", "50", "--test-size", "100",
                       "--out", path, "--log-level", "WARNING"] + list(extra))
    assert code == EXIT_OK
    return path


def _read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# --------------------------------------------------------------------------
# generate / train
# --------------------------------------------------------------------------
def test_generate_writes_dataset_and_manifest():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        assert sorted(os.listdir(data)) == ["manifest.json", "spec.json", "test.csv", "train.csv", "val.csv"]
        manifest = RunManifest(**_read_json(os.path.join(data, "manifest.json")))
        assert manifest.command == "generate" and manifest.data_hash
        assert load_dataset(data).spec.categories == 5


def test_train_outputs_validate():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        out = os.path.join(tmp, "run")
        code, stdout, _ = _run(["train", "--categories", "5", "--data", data, "--out", out] + TINY_FLAGS)
        assert code == EXIT_OK
        assert stdout.startswith("[ord2seq] full n=5")
        metrics = MetricsReport(**_read_json(os.path.join(out, "metrics.json")))
        assert metrics.variant == "full" and metrics.alpha == 0.3
        assert 0.0 <= metrics.accuracy <= 1.0 and 0.0 <= metrics.mae <= 4.0
        epochs = [EpochRecord(**r) for r in _read_jsonl(os.path.join(out, "log.jsonl"))]
        assert [e.epoch for e in epochs] == [0, 1]
        manifest = RunManifest(**_read_json(os.path.join(out, "manifest.json")))
        assert manifest.argv[0] == "train" and manifest.seeds == [0]
        assert manifest.torch_threads == 1
        assert set(manifest.artifacts) == {"metrics", "log", "checkpoint"}
        assert _read_json(os.path.join(out, "checkpoint.json"))["format"] == "ord2seq-ckpt-v1"


def test_usage_errors_exit_2():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        out = os.path.join(tmp, "run")
        cases = [
            ["train", "--categories", "1", "--out", out],
            ["train", "--categories", "5", "--alpha", "1.5", "--data", data, "--out", out],
            ["train", "--categories", "5", "--variant", "two-shot", "--out", out],
            ["train", "--categories", "4", "--data", data, "--out", out],
            ["train", "--categories", "5", "--width", "10", "--heads", "4", "--data", data, "--out", out],
            ["sweep-alpha", "--categories", "5", "--alphas", "", "--out", out],
            ["ablation", "--categories", "5", "--seeds", "0,1", "--data", data, "--out", out],
            ["bogus"],
        ]
        for argv in cases:
            code, _, _ = _run(argv)
            assert code == EXIT_USAGE, argv


def test_nan_abort_exits_3_with_diagnostics():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        out = os.path.join(tmp, "run")
        code, _, stderr = _run(["train", "--categories", "5", "--data", data, "--out", out,
                                "--lr", "1e300"] + TINY_FLAGS)
        assert code == EXIT_NAN
        path = os.path.join(out, "nan_diagnostics.json")
        assert path in stderr and os.path.exists(path)


# --------------------------------------------------------------------------
# evaluate / decode / replay
# --------------------------------------------------------------------------
def test_evaluate_reproduces_training_metrics():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--data", data, "--out", run] + TINY_FLAGS)[0] == EXIT_OK
        ev = os.path.join(tmp, "eval")
        code, _, _ = _run(["evaluate", "--checkpoint", os.path.join(run, "checkpoint.json"),
                           "--data", data, "--out", ev, "--log-level", "WARNING"])
        assert code == EXIT_OK
        assert _read_json(os.path.join(ev, "metrics.json")) == _read_json(os.path.join(run, "metrics.json"))


def test_decode_trace_records():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--data", data, "--out", run] + TINY_FLAGS)[0] == EXIT_OK
        dec = os.path.join(tmp, "decode")
        code, _, _ = _run(["decode", "--checkpoint", os.path.join(run, "checkpoint.json"), "--trace",
                           "--limit", "4", "--out", dec, "--log-level", "WARNING"])
        assert code == EXIT_OK
        predictions = pd.read_csv(os.path.join(dec, "predictions.csv"))
        assert list(predictions.columns) == ["sample", "label", "prediction"]
        assert len(predictions) == 4
        records = [TraceRecord(**r) for r in _read_jsonl(os.path.join(dec, "trace.jsonl"))]
        assert len(records) == 4 * 3
        assert [r.t for r in records[:3]] == [1, 2, 3]
        assert all(r.mask == [1.0] * 5 for r in records if r.t == 1)
        for i in range(4):
            assert records[3 * i].category == predictions["prediction"][i]


def test_decode_without_data_matches_saved_split_and_index_base():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp, extra=["--index-base", "1", "--noise", "0.3"])
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--data", data, "--out", run] + TINY_FLAGS)[0] == EXIT_OK
        dec = os.path.join(tmp, "decode")
        code, _, _ = _run(["decode", "--checkpoint", os.path.join(run, "checkpoint.json"),
                           "--out", dec, "--log-level", "WARNING"])
        assert code == EXIT_OK
        predictions = pd.read_csv(os.path.join(dec, "predictions.csv"))
        saved = pd.read_csv(os.path.join(data, "test.csv"))
        assert list(predictions["label"]) == list(saved["label"])
        assert predictions["prediction"].between(1, 5).all()

        # evaluation from the regenerated split equals evaluation from the saved CSVs
        from_spec, from_disk = os.path.join(tmp, "ev_spec"), os.path.join(tmp, "ev_disk")
        ckpt = os.path.join(run, "checkpoint.json")
        assert _run(["evaluate", "--checkpoint", ckpt, "--out", from_spec, "--log-level", "WARNING"])[0] == EXIT_OK
        assert _run(["evaluate", "--checkpoint", ckpt, "--data", data, "--out", from_disk,
                     "--log-level", "WARNING"])[0] == EXIT_OK
        assert _read_json(os.path.join(from_spec, "metrics.json")) == _read_json(os.path.join(from_disk, "metrics.json"))


def test_decode_trace_needs_ord2seq_checkpoint():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--variant", "softmax-baseline", "--data", data,
                     "--out", run] + TINY_FLAGS)[0] == EXIT_OK
        code, _, _ = _run(["decode", "--checkpoint", os.path.join(run, "checkpoint.json"), "--trace",
                           "--out", os.path.join(tmp, "decode")])
        assert code == EXIT_USAGE


def test_replay_is_bit_identical():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--data", data, "--out", run, "--seed", "4"]
                    + TINY_FLAGS)[0] == EXIT_OK
        again = os.path.join(tmp, "replay")
        code, _, _ = _run(["replay", "--manifest", os.path.join(run, "manifest.json"), "--out", again])
        assert code == EXIT_OK
        for name in ("metrics.json", "log.jsonl", "checkpoint.json"):
            with open(os.path.join(run, name), "rb") as a, open(os.path.join(again, name), "rb") as b:
                assert a.read() == b.read(), name


def test_replay_argv_rewrites_out():
    assert replay_argv(["train", "--out", "a", "--seed", "1"], "b") == ["train", "--out", "b", "--seed", "1"]
    assert replay_argv(["train", "--out=a"], "b") == ["train", "--out=b"]
    assert replay_argv(["report"], "b") == ["report", "--out", "b"]


def test_replay_anchors_relative_inputs_to_recorded_cwd():
    recorded = ["train", "--data", "data/n8", "--out", "runs/a", "--checkpoint=c.json", "--seed", "1"]
    assert replay_argv(recorded, "b", "/work") == [
        "train", "--data", os.path.join("/work", "data/n8"), "--out", "b",
        "--checkpoint=" + os.path.join("/work", "c.json"), "--seed", "1",
    ]
    assert replay_argv(["train", "--data", "/abs/d", "--out", "a"], "b", "/work")[2] == "/abs/d"
    assert flag_value(recorded, "--data") == "data/n8"
    assert flag_value(recorded, "--checkpoint") == "c.json"
    assert flag_value(recorded, "--sweep") is None


def test_replay_refuses_changed_data():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--data", data, "--out", run] + TINY_FLAGS)[0] == EXIT_OK
        manifest = RunManifest(**_read_json(os.path.join(run, "manifest.json")))
        assert manifest.cwd == os.getcwd() and manifest.data_hash

        # regenerate the dataset in place from another seed
        _make_data(tmp, extra=["--seed", "9"])
        again = os.path.join(tmp, "replay")
        code, _, stderr = _run(["replay", "--manifest", os.path.join(run, "manifest.json"), "--out", again])
        assert code == EXIT_USAGE
        assert "changed since the recorded run" in stderr
        assert not os.path.exists(os.path.join(again, "metrics.json"))


def test_replay_refuses_other_tool_version():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "manifest.json")
        manifest = RunManifest(tool_version="0.9.0", command="report",
                               argv=["report", "--sweep", "s.csv", "--out", tmp], config={})
        with open(path, "w", encoding="utf-8") as f:
            f.write(manifest.model_dump_json())
        code, _, stderr = _run(["replay", "--manifest", path, "--out", os.path.join(tmp, "again")])
        assert code == EXIT_USAGE and "0.9.0" in stderr


def test_generate_hash_matches_train_hash():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        run = os.path.join(tmp, "run")
        assert _run(["train", "--categories", "5", "--data", data, "--out", run] + TINY_FLAGS)[0] == EXIT_OK
        generated = RunManifest(**_read_json(os.path.join(data, "manifest.json")))
        trained = RunManifest(**_read_json(os.path.join(run, "manifest.json")))
        assert generated.data_hash == trained.data_hash


# --------------------------------------------------------------------------
# sweep-alpha / ablation / report
# --------------------------------------------------------------------------
def test_sweep_rows_sorted_with_alpha_zero_substitution():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        out = os.path.join(tmp, "sweep")
        code, _, _ = _run(["sweep-alpha", "--categories", "5", "--data", data, "--alphas", "0.5,0.0",
                           "--seeds", "1,0", "--out", out] + TINY_FLAGS)
        assert code == EXIT_OK
        frame = pd.read_csv(os.path.join(out, "sweep.csv"))
        assert list(frame.columns) == ["alpha", "seed", "accuracy", "mae"]
        assert list(zip(frame["alpha"], frame["seed"])) == [(0.0, 0), (0.0, 1), (0.5, 0), (0.5, 1)]
        manifest = RunManifest(**_read_json(os.path.join(out, "manifest.json")))
        assert manifest.substitutions == [{"field": "alpha", "requested": 0.0, "used": 1e-6}]
        with open(os.path.join(out, "sweep.csv"), "rb") as f:
            first = f.read()
        assert _run(["replay", "--manifest", os.path.join(out, "manifest.json"),
                     "--out", os.path.join(tmp, "again")])[0] == EXIT_OK
        with open(os.path.join(tmp, "again", "sweep.csv"), "rb") as f:
            assert f.read() == first


def test_ablation_and_report():
    with tempfile.TemporaryDirectory() as tmp:
        data = _make_data(tmp)
        out = os.path.join(tmp, "ablation")
        flags = tiny_flags(epochs=1)
        code, _, _ = _run(["ablation", "--categories", "5", "--data", data, "--seeds", "0,1,2",
                           "--out", out] + flags)
        assert code == EXIT_OK
        report = AblationReport(**_read_json(os.path.join(out, "ablation.json")))
        assert report.complete and report.seeds == [0, 1, 2]
        assert [v.variant for v in report.variants] == ["softmax-baseline", "one-shot", "no-mask", "full"]
        assert all(len(v.runs) == 3 for v in report.variants)
        assert all(len(v.adjacency) == 5 for v in report.variants)

        # no-mask equals a full run at alpha = 1 with the same seed
        full_at_one = os.path.join(tmp, "full1")
        assert _run(["train", "--categories", "5", "--data", data, "--alpha", "1.0", "--seed", "1",
                     "--out", full_at_one] + flags)[0] == EXIT_OK
        metrics = MetricsReport(**_read_json(os.path.join(full_at_one, "metrics.json")))
        no_mask = next(v for v in report.variants if v.variant == "no-mask")
        run = next(r for r in no_mask.runs if r.seed == 1)
        assert (run.accuracy, run.mae) == (metrics.accuracy, metrics.mae)

        code, stdout, _ = _run(["report", "--ablation", os.path.join(out, "ablation.json"),
                                "--out", tmp])
        assert code == EXIT_OK
        with open(os.path.join(tmp, "report.md"), encoding="utf-8") as f:
            text = f.read()
        assert "## Ablation" in text and "no-mask" in text and "Prediction breakdown" in text


def test_ablation_failure_writes_partial_report():
    with tempfile.TemporaryDirectory() as tmp:
        bench = load_dataset(_make_data(tmp))
        config = TrainConfig(categories=5, epochs=1, batch_size=50,
                             model=ModelConfig(width=8, heads=2, layers=1, ff_width=16))
        original = experiments.run_experiment

        def flaky(cfg, *args, **kwargs):
            if cfg.variant.value == "one-shot":
                raise RuntimeError("injected failure")
            return original(cfg, *args, **kwargs)

        experiments.run_experiment = flaky
        try:
            try:
                experiments.ablation(config, bench, [0, 1, 2], tmp)
                raise AssertionError("ablation did not fail")
            except PartialResultError as exc:
                assert exc.completed == ["softmax-baseline", "no-mask", "full"]
        finally:
            experiments.run_experiment = original
        report = AblationReport(**_read_json(os.path.join(tmp, "ablation.json")))
        assert not report.complete and "injected failure" in report.failed
        assert [v.variant for v in report.variants] == ["softmax-baseline", "no-mask", "full"]


def test_sweep_and_report_render_curve():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "sweep.csv")
        pd.DataFrame({"alpha": [0.1, 0.1, 0.3, 0.3], "seed": [0, 1, 0, 1],
                      "accuracy": [0.5, 0.6, 0.7, 0.8], "mae": [0.9, 0.7, 0.4, 0.2]}).to_csv(path, index=False)
        code, _, _ = _run(["report", "--sweep", path, "--out", tmp])
        assert code == EXIT_OK
        with open(os.path.join(tmp, "report.md"), encoding="utf-8") as f:
            text = f.read()
        assert "Lowest mean MAE at alpha = 0.3" in text
        assert "0.7500 ± 0.0707" in text


# --------------------------------------------------------------------------
# Schemas
# --------------------------------------------------------------------------
def test_schemas_match_record_models():
    for name, model in OUTPUT_MODELS.items():
        schema = load_schema(name)
        assert set(schema["properties"]) == set(model.model_fields), name
        assert set(schema["required"]) <= set(model.model_fields), name
        required_fields = {k for k, f in model.model_fields.items() if f.is_required()}
        assert required_fields <= set(schema["required"]), name


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
