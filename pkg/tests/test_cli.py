"""CLI subcommand round trips over temp files."""

import json

import pytest

from voxclean.cli import main


@pytest.fixture()
def corpus_dir(tmp_path):
    out = tmp_path / "corpus"
    code = main(
        [
            "simulate",
            "--n-speakers", "12",
            "--utts-per-speaker", "8",
            "--dim", "16",
            "--noise-sigma", "0.3",
            "--contamination-rate", "0.4",
            "--contamination-fraction", "0.3",
            "--seed", "77",
            "--language", "syn",
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    return out


def test_simulate_outputs(corpus_dir):
    assert (corpus_dir / "manifest.tsv").exists()
    assert (corpus_dir / "embeddings.tsv").exists()
    assert (corpus_dir / "truth.jsonl").exists()


def test_ingest_summary(corpus_dir, tmp_path, capsys):
    code = main(
        [
            "ingest",
            "--manifest", str(corpus_dir / "manifest.tsv"),
            "--language", "syn",
        ]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 96
    assert summary["eligibility"]["eligible"] == 96


def test_score_report_clean_eer_round_trip(corpus_dir, tmp_path, capsys):
    pairs_path = tmp_path / "pairs.tsv"
    code = main(
        [
            "score",
            "--manifest", str(corpus_dir / "manifest.tsv"),
            "--language", "syn",
            "--embeddings", str(corpus_dir / "embeddings.tsv"),
            "--out", str(pairs_path),
        ]
    )
    assert code == 0
    lines = pairs_path.read_text().splitlines()
    assert lines[0].split("\t") == [
        "language", "client_id", "enrollment_id", "test_id", "score", "status",
    ]
    assert len(lines) == 1 + 84  # 12 clients x (8 - 1), contamination moves rows

    report_path = tmp_path / "summary.json"
    assert main(["report", "--pairs", str(pairs_path), "--out", str(report_path)]) == 0
    summary = json.loads(report_path.read_text())
    assert summary["all"]["n"] > 0
    assert sum(summary["all"]["histogram"]) == summary["all"]["n"]

    cleaned_path = tmp_path / "cleaned.tsv"
    loss_path = tmp_path / "loss.json"
    code = main(
        [
            "clean",
            "--manifest", str(corpus_dir / "manifest.tsv"),
            "--language", "syn",
            "--pairs", str(pairs_path),
            "--tau", "0.5",
            "--mode", "drop_excluded",
            "--out-manifest", str(cleaned_path),
            "--report", str(loss_path),
        ]
    )
    assert code == 0
    loss = json.loads(loss_path.read_text())
    assert loss["aggregate"]["corpus_total"] == 84
    dropped = 96 - len(cleaned_path.read_text().splitlines()) + 1
    assert dropped == loss["aggregate"]["corpus_excluded"]

    eer_path = tmp_path / "eer.tsv"
    code = main(
        [
            "eer",
            "--pairs", str(pairs_path),
            "--truth", str(corpus_dir / "truth.jsonl"),
            "--out", str(eer_path),
        ]
    )
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert 0.0 <= out["eer"] <= 1.0
    assert eer_path.read_text().startswith("threshold\tfar\tfrr")


def test_audit_sampling_and_fit_flow(corpus_dir, tmp_path, capsys):
    pairs_path = tmp_path / "pairs.tsv"
    main(
        [
            "score",
            "--manifest", str(corpus_dir / "manifest.tsv"),
            "--language", "syn",
            "--embeddings", str(corpus_dir / "embeddings.tsv"),
            "--out", str(pairs_path),
        ]
    )
    audit_dir = tmp_path / "audit"
    code = main(
        [
            "sample-audit",
            "--pairs", str(pairs_path),
            "--seed", "5",
            "--per-bin", "4",
            "--annotators", "x,y",
            "--out-dir", str(audit_dir),
        ]
    )
    assert code == 0
    trials_path = audit_dir / "trials.jsonl"
    scored_path = audit_dir / "scored_trials.jsonl"
    trials = [json.loads(l) for l in trials_path.read_text().splitlines()]
    assert trials
    assert all("score" not in t for t in trials)

    # label every trial like an annotator session would
    from voxclean.audit import AuditLabel, LabelStore, read_scored_trials_jsonl

    labels_path = tmp_path / "labels.jsonl"
    store = LabelStore(labels_path)
    index = read_scored_trials_jsonl(scored_path)
    for t in trials:
        label = (
            "same_speaker" if index[t["trial_id"]].score >= 0.3 else "different_speaker"
        )
        store.add(AuditLabel(t["trial_id"], t["assignees"][0], label))

    fit_path = tmp_path / "fit.json"
    code = main(
        [
            "fit",
            "--labels", str(labels_path),
            "--scored-trials", str(scored_path),
            "--ridge", "0.5",
            "--out", str(fit_path),
        ]
    )
    assert code == 0
    fit = json.loads(fit_path.read_text())
    assert fit["converged"]
    assert "crossover" in fit

    # round 2 + kappa
    code = main(
        [
            "sample-audit",
            "--pairs", str(pairs_path),
            "--seed", "6",
            "--round", "2",
            "--trials", str(trials_path),
            "--labels", str(labels_path),
            "--annotators", "x,y",
            "--n-per-annotator", "8",
            "--out-dir", str(audit_dir),
        ]
    )
    assert code == 0
    round2 = [
        json.loads(l)
        for l in (audit_dir / "trials_round2.jsonl").read_text().splitlines()
    ]
    assert all(t["round"] == 2 for t in round2)
    for t in round2:
        if index[t["origin_trial_id"]].score >= 0.3:
            relabel = "same_speaker"
        else:
            relabel = "different_speaker"
        for a in t["assignees"]:
            store.add(AuditLabel(t["trial_id"], a, relabel))

    code = main(
        [
            "kappa",
            "--trials", str(audit_dir / "trials_all.jsonl"),
            "--labels", str(labels_path),
        ]
    )
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert result["kappa"] == 1.0  # deterministic labeling rule agrees with itself
    assert result["n_raters"] == 2


def test_missing_seed_usage_error(corpus_dir, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(
            [
                "sample-audit",
                "--pairs", str(corpus_dir / "manifest.tsv"),
                "--out-dir", str(tmp_path / "x"),
            ]
        )
    assert exc.value.code == 2


def test_unknown_subcommand_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_data_error_exit_code_1(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("client_id\tpath\nrow without sentence\tcol\n")
    code = main(["ingest", "--manifest", str(bad), "--language", "en"])
    assert code == 1


def test_missing_file_exit_code_1(tmp_path):
    code = main(
        ["ingest", "--manifest", str(tmp_path / "ghost.tsv"), "--language", "en"]
    )
    assert code == 1
