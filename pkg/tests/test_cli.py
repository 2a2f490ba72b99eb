import json

import pytest

from repurpose.cli import (
    EXIT_BAD_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_MODEL_MISMATCH,
    EXIT_OK,
    main,
)
from repurpose.synthetic import SyntheticConfig, generate_archive


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    generate_archive(out, SyntheticConfig(accounts=60, seed=11))
    return out


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_ingest_and_changes(tmp_path, fixture_dir, capsys):
    store = tmp_path / "store"
    code, out, _ = run(
        capsys, "ingest", "--input", str(fixture_dir / "archive.jsonl"), "--store", str(store)
    )
    assert code == EXIT_OK
    stats = json.loads(out)
    assert stats["records_malformed"] == 0
    assert stats["snapshots_emitted"] > 0

    events_path = tmp_path / "events.jsonl"
    code, out, _ = run(capsys, "changes", "--store", str(store), "--out", str(events_path))
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["events"] > 0
    assert events_path.exists()


def test_full_stage_chain(tmp_path, fixture_dir, capsys):
    store = tmp_path / "store"
    events = tmp_path / "events.jsonl"
    features = tmp_path / "features.csv"
    model = tmp_path / "model.json"
    predictions = tmp_path / "predictions.csv"
    report = tmp_path / "report.json"
    labels = fixture_dir / "labels.csv"

    assert run(capsys, "ingest", "--input", str(fixture_dir / "archive.jsonl"),
               "--store", str(store))[0] == EXIT_OK
    assert run(capsys, "changes", "--store", str(store), "--out", str(events))[0] == EXIT_OK
    code, out, _ = run(capsys, "features", "--events", str(events), "--out", str(features))
    assert code == EXIT_OK
    assert json.loads(out)["skipped"] == 0

    code, out, _ = run(capsys, "train", "--features", str(features), "--labels", str(labels),
                       "--model", str(model), "--trees", "20", "--seed", "3")
    assert code == EXIT_OK
    assert model.exists()

    code, out, _ = run(capsys, "classify", "--features", str(features), "--model", str(model),
                       "--out", str(predictions))
    assert code == EXIT_OK

    code, out, _ = run(capsys, "evaluate", "--predictions", str(predictions),
                       "--labels", str(labels), "--out", str(report))
    assert code == EXIT_OK
    payload = json.loads(out)
    assert payload["f1"] >= 0.95  # training-set fit on separable data
    assert report.exists()


def test_classify_defaults_to_baseline(tmp_path, fixture_dir, capsys):
    store = tmp_path / "store"
    events = tmp_path / "events.jsonl"
    features = tmp_path / "features.csv"
    predictions = tmp_path / "predictions.csv"
    run(capsys, "ingest", "--input", str(fixture_dir / "archive.jsonl"), "--store", str(store))
    run(capsys, "changes", "--store", str(store), "--out", str(events))
    run(capsys, "features", "--events", str(events), "--out", str(features),
        "--families", "EDT")
    code, out, _ = run(capsys, "classify", "--features", str(features),
                       "--out", str(predictions))
    assert code == EXIT_OK
    labels = {}
    import csv as csvmod

    with open(fixture_dir / "labels.csv", newline="") as fh:
        for row in list(csvmod.reader(fh))[1:]:
            labels[row[0]] = row[1]
    with open(predictions, newline="") as fh:
        rows = list(csvmod.reader(fh))[1:]
    # baseline decisions must match the planted truth exactly (fixture is
    # constructed to be separable by the fixed thresholds)
    for ref, _score, label in rows:
        assert labels[ref] == label


def test_characterize_outputs(tmp_path, fixture_dir, capsys):
    store = tmp_path / "store"
    events = tmp_path / "events.jsonl"
    out_dir = tmp_path / "report"
    run(capsys, "ingest", "--input", str(fixture_dir / "archive.jsonl"), "--store", str(store))
    run(capsys, "changes", "--store", str(store), "--out", str(events))
    code, out, _ = run(capsys, "characterize", "--events", str(events),
                       "--labels", str(fixture_dir / "labels.csv"), "--out-dir", str(out_dir))
    assert code == EXIT_OK
    payload = json.loads(out)
    assert payload["followers"]["welch"]["p_two_sided"] < 0.05
    for name in ("report.json", "report.txt", "followers.csv",
                 "deletion_ratios.csv", "dormancy_cdf.csv"):
        assert (out_dir / name).exists()


def test_pipeline_lists_exactly_planted_positives(tmp_path, fixture_dir, capsys):
    work = tmp_path / "work"
    code, out, _ = run(
        capsys, "pipeline", "--input", str(fixture_dir / "archive.jsonl"),
        "--work-dir", str(work),
    )
    assert code == EXIT_OK
    report = json.loads((work / "report.json").read_text())
    truth = json.loads((fixture_dir / "truth.json").read_text())["labels"]
    planted = sorted(ref for ref, label in truth.items() if label == "positive")
    assert report["positives"] == planted
    # stdout carries the summary with the positive count
    assert json.loads(out)["positives"] == len(planted)


def test_pipeline_with_labels_trains_and_evaluates(tmp_path, fixture_dir, capsys):
    work = tmp_path / "work"
    code, out, _ = run(
        capsys, "pipeline", "--input", str(fixture_dir / "archive.jsonl"),
        "--work-dir", str(work), "--labels", str(fixture_dir / "labels.csv"),
        "--seed", "5",
    )
    assert code == EXIT_OK
    payload = json.loads(out)
    assert payload["metrics"]["held_out"]["f1"] >= 0.9
    assert (work / "model.json").exists()


def test_pipeline_deterministic_outputs(tmp_path, fixture_dir, capsys):
    work1, work2 = tmp_path / "w1", tmp_path / "w2"
    for work in (work1, work2):
        code, _, _ = run(
            capsys, "pipeline", "--input", str(fixture_dir / "archive.jsonl"),
            "--work-dir", str(work), "--labels", str(fixture_dir / "labels.csv"),
        )
        assert code == EXIT_OK
    for name in ("events.jsonl", "features.csv", "model.json", "predictions.csv"):
        assert (work1 / name).read_bytes() == (work2 / name).read_bytes(), name
    r1 = json.loads((work1 / "report.json").read_text())
    r2 = json.loads((work2 / "report.json").read_text())
    r1.pop("meta")
    r2.pop("meta")
    ingest1 = r1.pop("ingest")
    ingest2 = r2.pop("ingest")
    ingest1.pop("elapsed"), ingest1.pop("throughput_mb_s")
    ingest2.pop("elapsed"), ingest2.pop("throughput_mb_s")
    # work-dir paths differ; compare artifact basenames
    arts1 = {k: v and v.split("/")[-1] for k, v in r1.pop("artifacts").items()}
    arts2 = {k: v and v.split("/")[-1] for k, v in r2.pop("artifacts").items()}
    assert arts1 == arts2
    assert ingest1 == ingest2
    assert r1 == r2


def test_missing_input_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "ingest", "--input", str(tmp_path / "nope*.jsonl"),
                       "--store", str(tmp_path / "s"))
    assert code == EXIT_MISSING_INPUT
    assert json.loads(err)["error"]["category"] == "missing_input"


def test_model_mismatch_exit_code(tmp_path, fixture_dir, capsys):
    store = tmp_path / "store"
    events = tmp_path / "events.jsonl"
    features = tmp_path / "features.csv"
    run(capsys, "ingest", "--input", str(fixture_dir / "archive.jsonl"), "--store", str(store))
    run(capsys, "changes", "--store", str(store), "--out", str(events))
    run(capsys, "features", "--events", str(events), "--out", str(features))
    bad_model = tmp_path / "bad.json"
    bad_model.write_text("{]")
    code, _, err = run(capsys, "classify", "--features", str(features),
                       "--model", str(bad_model), "--out", str(tmp_path / "p.csv"))
    assert code == EXIT_MODEL_MISMATCH
    assert json.loads(err)["error"]["category"] == "model_feature_mismatch"


def test_bad_config_exit_code(tmp_path, capsys):
    config = tmp_path / "run.conf"
    config.write_text("this is not key value\n")
    code, _, err = run(capsys, "--config", str(config), "synth",
                       "--out-dir", str(tmp_path / "o"))
    assert code == EXIT_BAD_CONFIG


def test_config_file_flags_can_be_overridden(tmp_path, capsys):
    config = tmp_path / "run.conf"
    config.write_text("accounts=25\nseed=9\n")
    out_dir = tmp_path / "fix"
    code, out, _ = run(capsys, "--config", str(config), "synth", "--out-dir", str(out_dir),
                       "--accounts", "30")
    assert code == EXIT_OK
    truth = json.loads((out_dir / "truth.json").read_text())
    assert truth["seed"] == 9  # from config file
    assert truth["accounts"] == 30  # flag wins
