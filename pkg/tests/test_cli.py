import json

import pytest

from trncat.cli import main

FAST = ["--set", "K=15", "--set", "max_iterations=2", "--set", "text.epochs=20",
        "--set", "gnn.epochs=20", "--set", "hidden_dim=8", "--set", "embedding_dim=8"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, net, run = root / "data", root / "net", root / "run"
    assert main(["synth", "--out", str(data), "--n-classes", "3", "--docs-per-class", "20",
                 "--test-fraction", "0.3"]) == 0
    assert main(["build-net", "--corpus", str(data / "train.jsonl"), "--labels",
                 str(data / "labels.json"), "--out", str(net), "--K", "15"]) == 0
    assert main(["train", "--corpus", str(data / "train.jsonl"), "--labels",
                 str(data / "labels.json"), "--network", str(net), "--out", str(run),
                 "--dev", str(data / "test.jsonl"), *FAST]) == 0
    return root


def test_pipeline_outputs(pipeline, capsys):
    run = pipeline / "run"
    for name in ("trace.jsonl", "text_model.npz", "gnn_model.npz", "predictions.tsv",
                 "config.json", "seeds.jsonl", "iter_01/text_model.npz"):
        assert (run / name).exists(), name
    trace = [json.loads(x) for x in (run / "trace.jsonl").read_text().splitlines()]
    assert [r["iteration"] for r in trace] == list(range(1, len(trace) + 1))
    assert "dev" in trace[0]
    assert json.loads((run / "config.json").read_text())["K"] == 15
    for name in ("nodes.tsv", "edges.tsv", "neighbors.tsv"):
        assert (pipeline / "net" / name).exists()


def test_eval_report(pipeline, capsys):
    data = pipeline / "data"
    out = pipeline / "report.json"
    rc = main(["eval", "--predictions", str(pipeline / "run" / "predictions.tsv"),
               "--corpus", str(data / "train.jsonl"), "--labels", str(data / "labels.json"),
               "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert 0 <= report["micro_f1"] <= 1 and report["n_evaluated"] > 0


def test_predict_without_network(pipeline, tmp_path):
    data = pipeline / "data"
    model = tmp_path / "model.npz"
    model.write_bytes((pipeline / "run" / "text_model.npz").read_bytes())
    out = tmp_path / "pred.tsv"
    assert main(["predict", "--model", str(model), "--corpus", str(data / "test.jsonl"),
                 "--out", str(out)]) == 0
    n_test = len((data / "test.jsonl").read_text().splitlines())
    assert len(out.read_text().splitlines()) == n_test


def test_eval_label_mismatch(pipeline, tmp_path, capsys):
    data = pipeline / "data"
    labels = json.loads((data / "labels.json").read_text())
    (tmp_path / "labels.json").write_text(json.dumps(labels[:-1]))
    missing = labels[-1]["id"]
    rc = main(["eval", "--predictions", str(pipeline / "run" / "predictions.tsv"),
               "--corpus", str(data / "train.jsonl"), "--labels", str(tmp_path / "labels.json")])
    assert rc == 1
    assert missing in capsys.readouterr().err


def test_usage_errors_exit_one(capsys):
    assert main(["bogus"]) == 1
    assert main(["train", "--nope"]) == 1
    assert main([]) == 1


def test_bad_config_key(pipeline, tmp_path, capsys):
    data = pipeline / "data"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"unknown_knob": 3}))
    rc = main(["train", "--corpus", str(data / "train.jsonl"), "--labels",
               str(data / "labels.json"), "--network", str(pipeline / "net"),
               "--out", str(tmp_path / "r"), "--config", str(cfg)])
    assert rc == 1 and "unknown_knob" in capsys.readouterr().err


def test_training_failure_exits_two(pipeline, tmp_path, capsys):
    data = pipeline / "data"
    rc = main(["train", "--corpus", str(data / "train.jsonl"), "--labels",
               str(data / "labels.json"), "--network", str(pipeline / "net"),
               "--out", str(tmp_path / "r"), *FAST, "--set", "text.learning_rate=NaN"])
    assert rc == 2 and "iteration 1" in capsys.readouterr().err


def test_default_config_round_trips(capsys, tmp_path):
    assert main(["default-config"]) == 0
    flat = json.loads(capsys.readouterr().out)
    assert flat["confidence_threshold"] == 0.9 and flat["max_iterations"] == 5
    assert "text.epochs" in flat and "gnn.learning_rate" in flat
