import csv
import json
import os

import pytest

from ehrcnn.cli import run

TINY = {
    "task": "tiny",
    "seed": 3,
    "synth": {"vocab_size": 40, "concept_count": 4, "patients": 400, "seq_len_range": [60, 120],
              "segment_len_range": [1, 1], "motif": [3, 27], "target_code": "TARGET",
              "case_fraction": 0.3},
    "cbow": {"dim": 8, "window": 5, "min_count": 1, "epochs": 1},
    "cohort": {"target_codes": ["TARGET"], "min_len": 50, "max_len": 250},
    "cnn": {"input_mode": "W2vFinetune", "filter_sizes": [2, 3], "filter_count": 6, "embed_dim": 8},
    "train": {"batch_size": 16, "max_epochs": 2, "patience": 1},
    "suite": {"modes": ["BofW"], "classifiers": ["LR"], "lambdas": [0.1]},
}


def count_lines(path):
    with open(path, encoding="utf-8") as fh:
        return sum(1 for _ in fh)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert run(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert run(["embed", "--config", str(cfg), "--events", str(root / "data" / "events.jsonl"),
                "--out", str(root / "emb")]) == 0
    return root, cfg


def test_synth_row_counts(work):
    root, _ = work
    assert count_lines(root / "data" / "patients.jsonl") == 400
    events = [json.loads(line) for line in open(root / "data" / "events.jsonl", encoding="utf-8")]
    per_patient = {}
    for e in events:
        per_patient[e["patient_id"]] = per_patient.get(e["patient_id"], 0) + 1
    assert len(per_patient) == 400
    assert all(60 <= n <= 121 for n in per_patient.values())


def test_synth_is_byte_identical(work, tmp_path):
    root, cfg = work
    assert run(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("patients.jsonl", "events.jsonl"):
        assert (tmp_path / name).read_bytes() == (root / "data" / name).read_bytes()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_synth_unwritable_dir(work, tmp_path, capsys):
    _, cfg = work
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert run(["synth", "--config", str(cfg), "--out", str(locked / "sub")]) == 2
    finally:
        locked.chmod(0o700)
    assert "error" in capsys.readouterr().err


def test_synth_out_is_a_file(work, tmp_path, capsys):
    _, cfg = work
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["synth", "--config", str(cfg), "--out", str(blocker / "sub")]) == 2
    assert "error" in capsys.readouterr().err


def test_synth_bad_config(tmp_path):
    assert run(["synth", "--synth.concept_count=7", "--out", str(tmp_path)]) == 2


def test_embed_dim_flag(work, tmp_path):
    root, cfg = work
    assert run(["embed", "--config", str(cfg), "--events", str(root / "data" / "events.jsonl"),
                "--cbow.dim=200", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "embeddings.txt").read_text(encoding="utf-8").splitlines()[0]
    assert header.endswith("200")


def test_embed_missing_events(tmp_path):
    assert run(["embed", "--events", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 2


def test_neighbors(work, capsys):
    root, _ = work
    emb = str(root / "emb" / "embeddings.txt")
    assert run(["neighbors", "--emb", emb, "--code", "E0003", "--k", "0"]) == 0
    assert capsys.readouterr().out == ""
    assert run(["neighbors", "--emb", emb, "--code", "E0003", "--k", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    for line in lines:
        code, cos = line.split()
        assert code != "E0003" and -1 <= float(cos) <= 1
    assert run(["neighbors", "--emb", emb, "--code", "NOPE", "--k", "3"]) == 3


def test_cohort_holdoff_trend(work, tmp_path):
    root, cfg = work
    cases = []
    for h in (0, 90, 180):
        out = tmp_path / f"h{h}"
        assert run(["cohort", "--config", str(cfg), "--events", str(root / "data" / "events.jsonl"),
                    f"--cohort.holdoff_days={h}", "--out", str(out)]) == 0
        summary = json.loads((out / "cohort.jsonl.summary.json").read_text())
        total_cases = sum(v["cases"] for v in summary["counts"].values())
        total_controls = sum(v["controls"] for v in summary["counts"].values())
        assert total_controls == 2 * total_cases
        cases.append(total_cases)
    assert cases[0] >= cases[1] >= cases[2]


def test_cohort_bad_lengths(work, tmp_path):
    root, cfg = work
    assert run(["cohort", "--config", str(cfg), "--events", str(root / "data" / "events.jsonl"),
                "--cohort.min_len=300", "--out", str(tmp_path)]) == 2


@pytest.fixture(scope="module")
def cohort_dir(work):
    root, cfg = work
    out = root / "cohort"
    assert run(["cohort", "--config", str(cfg), "--events", str(root / "data" / "events.jsonl"),
                "--out", str(out)]) == 0
    return out


def test_train_then_evaluate(work, cohort_dir, tmp_path):
    root, cfg = work
    cohort = str(cohort_dir / "cohort.jsonl")
    assert run(["train", "--config", str(cfg), "--cohort", cohort,
                "--emb", str(root / "emb" / "embeddings.txt"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.ckpt").exists()
    assert run(["evaluate", "--config", str(cfg), "--cohort", cohort,
                "--model", str(tmp_path / "model.ckpt"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    (model,) = report["models"]
    for key in ("accuracy", "auroc", "auprc", "max_f1"):
        assert 0.0 <= model[key] <= 1.0
    assert report["control_count"] == 2 * report["case_count"]
    assert len(report["config_fingerprint"]) == 16
    with open(tmp_path / "table1.csv", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["Method", "Input", "Accuracy", "AUROC", "AUPRC", "Max F1"]


def test_train_fixed_mode_needs_embedding(work, cohort_dir, tmp_path, capsys):
    _, cfg = work
    assert run(["train", "--config", str(cfg), "--cohort", str(cohort_dir / "cohort.jsonl"),
                "--mode", "W2vFixed", "--out", str(tmp_path)]) == 2
    assert "--emb" in capsys.readouterr().err


def test_train_rand_without_embedding(work, cohort_dir, tmp_path):
    _, cfg = work
    assert run(["train", "--config", str(cfg), "--cohort", str(cohort_dir / "cohort.jsonl"),
                "--mode", "Rand", "--out", str(tmp_path)]) == 0


def test_suite_and_evaluate(work, cohort_dir, tmp_path):
    root, cfg = work
    cohort = str(cohort_dir / "cohort.jsonl")
    assert run(["suite", "--config", str(cfg), "--cohort", cohort,
                "--emb", str(root / "emb" / "embeddings.txt"), "--out", str(tmp_path)]) == 0
    assert run(["evaluate", "--config", str(cfg), "--cohort", cohort,
                "--suite", str(tmp_path / "suite.json"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert [(m["method"], m["input"]) for m in report["models"]] == [("LR", "BofW")]


def test_unknown_flag(tmp_path):
    assert run(["synth", "--bogus", "--out", str(tmp_path)]) == 2
