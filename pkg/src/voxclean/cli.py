"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 2 usage error, 1 data or consistency error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import audit, calibration, cleaning, scoring, service, synth
from .embeddings import load_embedding_table, table_provider, write_embedding_table
from .errors import VoxcleanError
from .ingest import (
    TokenizerMode,
    TokenizerPolicy,
    eligibility_counts,
    mark_eligibility,
    parse_manifest,
)

logger = logging.getLogger("voxclean")


def _policy(args) -> TokenizerPolicy | None:
    mode = getattr(args, "mode", None)
    if mode in {m.value for m in TokenizerMode}:
        return TokenizerPolicy(TokenizerMode(mode), args.language)
    return None


def _load_manifest(args):
    data = Path(args.manifest).read_bytes()
    return parse_manifest(data, args.language, policy=_policy(args))


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        logger.info("wrote %s", out)
    else:
        print(text)


def cmd_ingest(args) -> int:
    manifest = _load_manifest(args)
    tags = mark_eligibility(manifest)
    summary = {
        "language": manifest.language,
        "records": len(manifest),
        "clients": len({r.client_id for r in manifest.records}),
        "eligibility": eligibility_counts(tags),
        "tokenizer_mode": manifest.policy.mode.value,
    }
    _write_json(summary, args.out)
    return 0


def _scored_pairs_from_args(args):
    manifest = _load_manifest(args)
    tags = mark_eligibility(manifest)
    assignment = scoring.select_enrollment(manifest, tags)
    pairs = scoring.generate_pairs(manifest, assignment, tags)
    table = load_embedding_table(args.embeddings)
    scored = scoring.score_pairs(pairs, table_provider(table))
    return manifest, scored


def cmd_score(args) -> int:
    _, scored = _scored_pairs_from_args(args)
    n = scoring.write_pairs_tsv(args.out, scored)
    by_status: dict[str, int] = {}
    for p in scored:
        by_status[p.status.value] = by_status.get(p.status.value, 0) + 1
    logger.info("wrote %d pairs to %s (%s)", n, args.out, by_status)
    return 0


def cmd_report(args) -> int:
    pairs = scoring.read_pairs_tsv(args.pairs)
    languages = sorted({p.language for p in pairs})
    payload = {"all": asdict(scoring.summarize_scores(pairs))}
    payload["languages"] = {
        lang: asdict(scoring.summarize_scores(pairs, group=lang)) for lang in languages
    }
    _write_json(payload, args.out)
    return 0


def cmd_sample_audit(args) -> int:
    pairs = scoring.read_pairs_tsv(args.pairs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    annotators = [a for a in args.annotators.split(",") if a]

    if args.round == 1:
        trials = audit.sample_round1(pairs, per_bin=args.per_bin, seed=args.seed)
        trials = audit.assign_annotators(trials, annotators)
        audit.write_trials_jsonl(out_dir / "trials.jsonl", trials)
        index = audit.scored_trial_index(trials, pairs)
        audit.write_scored_trials_jsonl(out_dir / "scored_trials.jsonl", index)
        logger.info(
            "sampled %d round-1 trials for %d annotators into %s",
            len(trials),
            len(annotators),
            out_dir,
        )
    else:
        trials = audit.read_trials_jsonl(args.trials)
        store = audit.LabelStore(args.labels)
        round2 = audit.sample_round2(
            store.labels(),
            trials,
            n_per_annotator=args.n_per_annotator,
            seed=args.seed,
            annotators=annotators or None,
        )
        audit.write_trials_jsonl(out_dir / "trials_round2.jsonl", round2)
        index = audit.scored_trial_index(round2, pairs)
        audit.write_scored_trials_jsonl(out_dir / "scored_trials_round2.jsonl", index)
        audit.write_trials_jsonl(out_dir / "trials_all.jsonl", trials + round2)
        logger.info("sampled %d round-2 trials into %s", len(round2), out_dir)
    return 0


def cmd_serve(args) -> int:
    service.serve(
        trials_path=args.trials,
        labels_path=args.labels,
        clips_dir=args.clips_dir,
        host=args.host,
        port=args.port,
        annotators=[a for a in args.annotators.split(",") if a] or None
        if args.annotators
        else None,
        static_dir=args.static_dir,
    )
    return 0


def cmd_kappa(args) -> int:
    trials = audit.read_trials_jsonl(args.trials)
    store = audit.LabelStore(args.labels)
    tables = audit.round2_rating_tables(trials, store.labels())
    categories = (
        tuple(args.categories.split(",")) if args.categories else audit.LABEL_CATEGORIES
    )
    result = audit.fleiss_kappa(tables, categories=categories, n_ratings=args.n_ratings)
    _write_json(asdict(result), args.out)
    return 0


def cmd_fit(args) -> int:
    store = audit.LabelStore(args.labels)
    index = audit.read_scored_trials_jsonl(args.scored_trials)
    trials = calibration.build_binary_trials(store.labels(), index)
    report = calibration.fit_report(trials, ridge=args.ridge)
    _write_json(report, args.out)
    return 0


def cmd_clean(args) -> int:
    manifest = _load_manifest(args)
    pairs = [
        p for p in scoring.read_pairs_tsv(args.pairs) if p.language == args.language
    ]
    if args.fit:
        fit = json.loads(Path(args.fit).read_text(encoding="utf-8"))
        tau = fit["crossover"]
        provenance = cleaning.ThresholdProvenance.AUDITED_CROSSOVER
    else:
        tau = args.tau
        provenance = cleaning.ThresholdProvenance.USER_SET
    policy = cleaning.ThresholdPolicy(tau=tau, provenance=provenance)
    decisions = cleaning.apply_threshold(pairs, policy)
    report = cleaning.data_loss_report(
        decisions, manifest, flag_threshold=args.flag_threshold
    )
    Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    logger.info("tau=%.6f (%s)", tau, provenance.value)
    print(report.to_text(), file=sys.stderr)
    exported = cleaning.export_cleaned_manifest(
        manifest, decisions, cleaning.ExportMode(args.mode)
    )
    Path(args.out_manifest).write_text(exported, encoding="utf-8")
    logger.info("wrote %s and %s", args.out_manifest, args.report)
    return 0


def cmd_simulate(args) -> int:
    config = synth.SynthConfig(
        n_speakers=args.n_speakers,
        utts_per_speaker=args.utts_per_speaker,
        dim=args.dim,
        noise_sigma=args.noise_sigma,
        contamination_rate=args.contamination_rate,
        contamination_fraction=args.contamination_fraction,
        seed=args.seed,
        language=args.language,
    )
    manifest, table, truth = synth.generate_corpus(config)
    if config.contamination_rate > 0:
        manifest, truth = synth.contaminate(
            manifest,
            truth,
            rate=config.contamination_rate,
            fraction=config.contamination_fraction,
            seed=config.seed + 1,
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.tsv").write_text(
        synth.manifest_tsv(manifest), encoding="utf-8"
    )
    write_embedding_table(
        out_dir / "embeddings.tsv",
        table.dim,
        (table.get(uid) for uid in table.ids()),
    )
    synth.write_truth_jsonl(out_dir / "truth.jsonl", truth)
    logger.info(
        "simulated %d records (%d clients) into %s",
        len(manifest),
        len({r.client_id for r in manifest.records}),
        out_dir,
    )
    return 0


def cmd_eer(args) -> int:
    pairs = scoring.read_pairs_tsv(args.pairs)
    truth = synth.read_truth_jsonl(args.truth)
    same, diff = [], []
    for p in pairs:
        if p.status is not scoring.PairStatus.SCORED:
            continue
        s_test = truth.speaker_of.get(p.test_id)
        s_enroll = truth.speaker_of.get(p.enrollment_id)
        if s_test is None or s_enroll is None:
            raise VoxcleanError(f"truth missing utterance for pair {p.test_id}")
        (same if s_test == s_enroll else diff).append(p.score)
    rates = calibration.compute_eer(same, diff)
    if args.out:
        Path(args.out).write_text(calibration.error_rates_tsv(rates), encoding="utf-8")
        logger.info("wrote %s", args.out)
    print(
        json.dumps(
            {"eer": rates.eer, "eer_threshold": rates.eer_threshold,
             "n_same": len(same), "n_different": len(diff)},
            indent=2,
        )
    )
    return 0


def _add_manifest_args(p: argparse.ArgumentParser, tokenizer_flag: bool = True) -> None:
    p.add_argument("--manifest", required=True, help="validated-utterance TSV")
    p.add_argument("--language", required=True, help="language code")
    if tokenizer_flag:
        p.add_argument(
            "--mode",
            choices=[m.value for m in TokenizerMode],
            help="override the tokenizer mode for this language",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxclean",
        description="Quantify and reduce speaker heterogeneity in corpus client IDs",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a manifest and report eligibility")
    _add_manifest_args(p)
    p.add_argument("--out", help="summary JSON path (default stdout)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("score", help="score enrollment/test pairs")
    _add_manifest_args(p)
    p.add_argument("--embeddings", required=True, help="embedding table file")
    p.add_argument("--out", required=True, help="scored pairs TSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="score distribution summaries")
    p.add_argument("--pairs", required=True, help="scored pairs TSV")
    p.add_argument("--out", help="summary JSON path (default stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sample-audit", help="sample blinded audit trials")
    p.add_argument("--pairs", required=True, help="scored pairs TSV")
    p.add_argument("--seed", type=int, required=True, help="sampling seed")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--round", type=int, choices=(1, 2), default=1)
    p.add_argument("--per-bin", type=int, default=audit.DEFAULT_PER_BIN)
    p.add_argument(
        "--annotators",
        default="",
        help="comma-separated roster (required for round 1)",
    )
    p.add_argument("--trials", help="round-1 trials file (round 2 only)")
    p.add_argument("--labels", help="round-1 labels file (round 2 only)")
    p.add_argument(
        "--n-per-annotator", type=int, default=audit.DEFAULT_ROUND2_PER_ANNOTATOR
    )
    p.set_defaults(func=cmd_sample_audit)

    p = sub.add_parser("serve", help="run the blinded audit HTTP service")
    p.add_argument("--trials", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--clips-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--annotators", default="")
    p.add_argument("--static-dir", help="built web UI to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("kappa", help="Fleiss' kappa over round-2 re-audits")
    p.add_argument("--trials", required=True, help="trials file incl. round 2")
    p.add_argument("--labels", required=True)
    p.add_argument("--categories", help="comma-separated category subset")
    p.add_argument("--n-ratings", type=int, help="pin ratings per trial")
    p.add_argument("--out", help="result JSON path (default stdout)")
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("fit", help="logistic fit and crossover threshold")
    p.add_argument("--labels", required=True)
    p.add_argument("--scored-trials", required=True, help="scored trial join table")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--out", help="fit report JSON path (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("clean", help="apply a threshold and export the manifest")
    _add_manifest_args(p, tokenizer_flag=False)
    p.add_argument("--pairs", required=True, help="scored pairs TSV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--tau", type=float, help="similarity threshold")
    group.add_argument("--fit", help="fit report JSON providing the crossover")
    p.add_argument(
        "--mode",
        choices=[m.value for m in cleaning.ExportMode],
        default=cleaning.ExportMode.ANNOTATE_ONLY.value,
        dest="mode",
    )
    p.add_argument(
        "--flag-threshold",
        type=float,
        default=cleaning.DEFAULT_CLIENT_FLAG_THRESHOLD,
        help="per-client loss flag level",
    )
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--report", required=True, help="loss report JSON path")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("simulate", help="generate a synthetic corpus with truth")
    p.add_argument("--n-speakers", type=int, required=True)
    p.add_argument("--utts-per-speaker", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--contamination-rate", type=float, default=0.0)
    p.add_argument("--contamination-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--language", default="syn")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eer", help="truth-labeled FAR/FRR sweep and EER")
    p.add_argument("--pairs", required=True)
    p.add_argument("--truth", required=True, help="truth JSONL")
    p.add_argument("--out", help="operating points TSV")
    p.set_defaults(func=cmd_eer)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except VoxcleanError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1
    except FileNotFoundError as exc:
        logger.error("file not found: %s", exc.filename or exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
