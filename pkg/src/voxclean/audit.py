"""Blinded audit protocol: stratified sampling, assignment, labels, kappa.

Round one samples up to five scored pairs per similarity bin per language
and deals whole languages round-robin to annotators. Round two re-audits a
sample of each annotator's labeled trials by all the other annotators, which
yields the rating tables for Fleiss' kappa.

Persisted trial objects never contain a similarity score or bin index; the
join lives in a separate scored-trial table that is not annotator-facing.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConsistencyError,
    ContractError,
    DuplicateLabelError,
    EmptyInputError,
    InsufficientDataError,
)
from .scoring import PairStatus, ScoredPair

logger = logging.getLogger(__name__)

# Bin 0 is open below (cosine scores can be negative); bin 5 open above.
AUDIT_BIN_EDGES = (0.1, 0.2, 0.3, 0.4, 0.5)
N_AUDIT_BINS = 6

LABEL_CATEGORIES = (
    "same_speaker",
    "different_speaker",
    "audio_quality_issue",
    "missing_speech",
    "not_sure",
)

DEFAULT_PER_BIN = 5
DEFAULT_ROUND2_PER_ANNOTATOR = 30


def audit_bin(score: float) -> int:
    """Bin index 0-5 for a similarity score."""
    return bisect.bisect_right(AUDIT_BIN_EDGES, score)


@dataclass(frozen=True)
class AuditTrial:
    trial_id: str
    language: str
    client_id: str
    enrollment_id: str
    test_id: str
    round: int  # 1 or 2
    assignees: tuple[str, ...] = ()
    origin_annotator: str | None = None
    origin_trial_id: str | None = None


@dataclass(frozen=True)
class ScoredTrialRecord:
    """Join-table entry retaining the score; never served to annotators."""

    trial_id: str
    score: float
    bin: int
    language: str
    client_id: str
    enrollment_id: str
    test_id: str


@dataclass(frozen=True)
class AuditLabel:
    trial_id: str
    annotator: str
    label: str
    timestamp: float = 0.0


@dataclass(frozen=True)
class AgreementResult:
    kappa: float
    n_subjects: int
    n_raters: int
    n_categories: int
    dropped_trials: int = 0


def _trial_id(round_no: int, language: str, enrollment_id: str, test_id: str) -> str:
    payload = f"r{round_no}|{language}|{enrollment_id}|{test_id}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def sample_round1(
    pairs: Sequence[ScoredPair],
    per_bin: int = DEFAULT_PER_BIN,
    seed: int = 0,
) -> list[AuditTrial]:
    """Stratified round-one sample: per language, up to per_bin pairs from
    each of the six score bins, uniform without replacement, seed-pinned.
    """
    scored = [p for p in pairs if p.status is PairStatus.SCORED]
    by_language: dict[str, list[ScoredPair]] = {}
    for p in scored:
        by_language.setdefault(p.language, []).append(p)

    all_languages = {p.language for p in pairs}
    for language in sorted(all_languages - set(by_language)):
        logger.warning("language %s has no scored pairs; skipped", language)

    rng = np.random.default_rng(seed)
    trials: list[AuditTrial] = []
    for language in sorted(by_language):
        bins: list[list[ScoredPair]] = [[] for _ in range(N_AUDIT_BINS)]
        for p in by_language[language]:
            bins[audit_bin(p.score)].append(p)
        for bin_index, candidates in enumerate(bins):
            k = min(per_bin, len(candidates))
            if k < per_bin:
                logger.info(
                    "shortfall: language=%s bin=%d wanted=%d available=%d",
                    language,
                    bin_index,
                    per_bin,
                    len(candidates),
                )
            if k == 0:
                continue
            chosen = sorted(rng.choice(len(candidates), size=k, replace=False))
            for idx in chosen:
                p = candidates[idx]
                trials.append(
                    AuditTrial(
                        trial_id=_trial_id(1, language, p.enrollment_id, p.test_id),
                        language=language,
                        client_id=p.client_id,
                        enrollment_id=p.enrollment_id,
                        test_id=p.test_id,
                        round=1,
                    )
                )
    return trials


def scored_trial_index(
    trials: Sequence[AuditTrial], pairs: Sequence[ScoredPair]
) -> dict[str, ScoredTrialRecord]:
    """Rebuild the trial -> score join from the pair set the trials came from."""
    pair_index = {
        (p.language, p.enrollment_id, p.test_id): p
        for p in pairs
        if p.status is PairStatus.SCORED
    }
    index: dict[str, ScoredTrialRecord] = {}
    for t in trials:
        pair = pair_index.get((t.language, t.enrollment_id, t.test_id))
        if pair is None:
            raise ConsistencyError(f"trial {t.trial_id} has no scored source pair")
        index[t.trial_id] = ScoredTrialRecord(
            trial_id=t.trial_id,
            score=pair.score,
            bin=audit_bin(pair.score),
            language=t.language,
            client_id=t.client_id,
            enrollment_id=t.enrollment_id,
            test_id=t.test_id,
        )
    return index


def assign_annotators(
    trials: Sequence[AuditTrial], annotators: Sequence[str]
) -> list[AuditTrial]:
    """Deal languages round-robin (sorted by code) so each language's trials
    all go to one annotator."""
    if not annotators:
        raise ContractError("empty annotator list")
    if any(t.round != 1 for t in trials):
        raise ContractError("assignment applies to round-one trials only")
    languages = sorted({t.language for t in trials})
    owner = {
        language: annotators[i % len(annotators)]
        for i, language in enumerate(languages)
    }
    return [replace(t, assignees=(owner[t.language],)) for t in trials]


def sample_round2(
    labels: Sequence[AuditLabel],
    trials: Sequence[AuditTrial],
    n_per_annotator: int = DEFAULT_ROUND2_PER_ANNOTATOR,
    seed: int = 0,
    annotators: Sequence[str] | None = None,
) -> list[AuditTrial]:
    """Per annotator, re-sample n of their labeled round-one trials for
    re-audit by everyone else."""
    round1 = {t.trial_id: t for t in trials if t.round == 1}
    roster = list(annotators) if annotators else sorted({l.annotator for l in labels})
    labeled: dict[str, set[str]] = {a: set() for a in roster}
    for label in labels:
        trial = round1.get(label.trial_id)
        if trial is None or label.annotator not in roster:
            continue
        if label.annotator in trial.assignees:
            labeled[label.annotator].add(label.trial_id)

    trial_order = [t.trial_id for t in trials if t.round == 1]
    rng = np.random.default_rng(seed)
    result: list[AuditTrial] = []
    for annotator in roster:
        candidates = [tid for tid in trial_order if tid in labeled[annotator]]
        if not candidates:
            logger.warning("annotator %s has no round-one labels; skipped", annotator)
            continue
        k = min(n_per_annotator, len(candidates))
        chosen = sorted(rng.choice(len(candidates), size=k, replace=False))
        for idx in chosen:
            origin = round1[candidates[idx]]
            result.append(
                AuditTrial(
                    trial_id=_trial_id(
                        2, origin.language, origin.enrollment_id, origin.test_id
                    ),
                    language=origin.language,
                    client_id=origin.client_id,
                    enrollment_id=origin.enrollment_id,
                    test_id=origin.test_id,
                    round=2,
                    assignees=tuple(a for a in roster if a != annotator),
                    origin_annotator=annotator,
                    origin_trial_id=origin.trial_id,
                )
            )
    return result


def fleiss_kappa(
    ratings_by_trial: Mapping[str, Sequence[str]],
    categories: Sequence[str] = LABEL_CATEGORIES,
    n_ratings: int | None = None,
) -> AgreementResult:
    """Fleiss' kappa over trials rated by a fixed number of raters.

    ratings_by_trial maps a trial id to the category labels it received.
    Ratings outside `categories` are ignored; trials left with fewer than
    n_ratings ratings (default: the maximum observed) are dropped and
    counted. When every rating lands in one category, expected agreement is
    1 and kappa is defined as 1.
    """
    category_set = list(categories)
    col = {c: j for j, c in enumerate(category_set)}
    filtered: dict[str, list[str]] = {}
    for trial_id, ratings in ratings_by_trial.items():
        kept = [r for r in ratings if r in col]
        if kept:
            filtered[trial_id] = kept

    if not filtered:
        raise InsufficientDataError("no ratings in the requested categories")
    r = n_ratings if n_ratings is not None else max(len(v) for v in filtered.values())
    if r < 2:
        raise InsufficientDataError("kappa needs at least 2 ratings per trial")
    usable = {tid: v for tid, v in filtered.items() if len(v) >= r}
    dropped = len(ratings_by_trial) - len(usable)
    if dropped:
        logger.info("fleiss_kappa: dropped %d trials with fewer than %d ratings",
                    dropped, r)
    if len(usable) < 2:
        raise InsufficientDataError(
            f"only {len(usable)} usable trials with {r} ratings each"
        )

    table = np.zeros((len(usable), len(category_set)), dtype=np.int64)
    for i, (_, ratings) in enumerate(sorted(usable.items())):
        for rating in ratings[:r]:
            table[i, col[rating]] += 1

    p_i = (np.sum(table * table, axis=1) - r) / (r * (r - 1))
    p_bar = float(np.mean(p_i))
    shares = table.sum(axis=0) / float(len(usable) * r)
    p_e = float(np.dot(shares, shares))
    if p_e == 1.0:
        kappa = 1.0
    else:
        kappa = (p_bar - p_e) / (1.0 - p_e)
    return AgreementResult(
        kappa=kappa,
        n_subjects=len(usable),
        n_raters=r,
        n_categories=len(category_set),
        dropped_trials=dropped,
    )


def round2_rating_tables(
    trials: Sequence[AuditTrial], labels: Sequence[AuditLabel]
) -> dict[str, list[str]]:
    """Assemble per-trial rating lists for round-two kappa.

    Each round-two trial contributes its re-audit labels plus the origin
    annotator's round-one label, giving r ratings for r annotators total.
    """
    by_key = {(l.trial_id, l.annotator): l.label for l in labels}
    tables: dict[str, list[str]] = {}
    for t in trials:
        if t.round != 2:
            continue
        ratings: list[str] = []
        origin = by_key.get((t.origin_trial_id, t.origin_annotator))
        if origin is not None:
            ratings.append(origin)
        for annotator in t.assignees:
            rating = by_key.get((t.trial_id, annotator))
            if rating is not None:
                ratings.append(rating)
        if ratings:
            tables[t.trial_id] = ratings
    return tables


def label_distribution(labels: Sequence[AuditLabel]) -> dict[str, float]:
    """Shares over the five categories; zeros included, sums to 1."""
    if not labels:
        raise EmptyInputError("no labels")
    counts = {c: 0 for c in LABEL_CATEGORIES}
    for label in labels:
        if label.label not in counts:
            raise ConsistencyError(f"unknown label category: {label.label}")
        counts[label.label] += 1
    total = len(labels)
    return {c: counts[c] / total for c in LABEL_CATEGORIES}


def label_distribution_by_bin(
    labels: Sequence[AuditLabel],
    scored_index: Mapping[str, ScoredTrialRecord],
) -> dict[int, dict[str, float]]:
    """Per-bin label shares (the per-bin audit outcome view)."""
    grouped: dict[int, list[AuditLabel]] = {}
    for label in labels:
        record = scored_index.get(label.trial_id)
        if record is None:
            raise ConsistencyError(f"label references unknown trial: {label.trial_id}")
        grouped.setdefault(record.bin, []).append(label)
    return {b: label_distribution(ls) for b, ls in sorted(grouped.items())}


# --- persistence -----------------------------------------------------------

def trial_to_dict(trial: AuditTrial) -> dict:
    d = {
        "trial_id": trial.trial_id,
        "language": trial.language,
        "client_id": trial.client_id,
        "enrollment_id": trial.enrollment_id,
        "test_id": trial.test_id,
        "round": trial.round,
        "assignees": list(trial.assignees),
    }
    if trial.round == 2:
        d["origin_annotator"] = trial.origin_annotator
        d["origin_trial_id"] = trial.origin_trial_id
    return d


def write_trials_jsonl(path: str | Path, trials: Iterable[AuditTrial]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trials:
            fh.write(json.dumps(trial_to_dict(t), sort_keys=True) + "\n")


def read_trials_jsonl(path: str | Path) -> list[AuditTrial]:
    trials = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        trials.append(
            AuditTrial(
                trial_id=d["trial_id"],
                language=d["language"],
                client_id=d["client_id"],
                enrollment_id=d["enrollment_id"],
                test_id=d["test_id"],
                round=d["round"],
                assignees=tuple(d["assignees"]),
                origin_annotator=d.get("origin_annotator"),
                origin_trial_id=d.get("origin_trial_id"),
            )
        )
    return trials


def write_scored_trials_jsonl(
    path: str | Path, index: Mapping[str, ScoredTrialRecord]
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trial_id in sorted(index):
            rec = index[trial_id]
            fh.write(
                json.dumps(
                    {
                        "trial_id": rec.trial_id,
                        "score": rec.score,
                        "bin": rec.bin,
                        "language": rec.language,
                        "client_id": rec.client_id,
                        "enrollment_id": rec.enrollment_id,
                        "test_id": rec.test_id,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_scored_trials_jsonl(path: str | Path) -> dict[str, ScoredTrialRecord]:
    index = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        index[d["trial_id"]] = ScoredTrialRecord(
            trial_id=d["trial_id"],
            score=d["score"],
            bin=d["bin"],
            language=d["language"],
            client_id=d["client_id"],
            enrollment_id=d["enrollment_id"],
            test_id=d["test_id"],
        )
    return index


class LabelStore:
    """Append-only label log, optionally durable as JSON lines.

    Re-submitting a (trial, annotator) pair raises DuplicateLabelError; the
    duplicate check plus append is the single serialized critical section,
    and the line is flushed and fsynced before add() returns.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._labels: list[AuditLabel] = []
        self._seen: set[tuple[str, str]] = set()
        if self._path is not None and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                d = json.loads(line)
                label = AuditLabel(
                    trial_id=d["trial_id"],
                    annotator=d["annotator"],
                    label=d["label"],
                    timestamp=d.get("timestamp", 0.0),
                )
                self._labels.append(label)
                self._seen.add((label.trial_id, label.annotator))

    def __len__(self) -> int:
        return len(self._labels)

    def has(self, trial_id: str, annotator: str) -> bool:
        return (trial_id, annotator) in self._seen

    def add(self, label: AuditLabel) -> AuditLabel:
        if label.label not in LABEL_CATEGORIES:
            raise ConsistencyError(f"unknown label category: {label.label}")
        if label.timestamp == 0.0:
            label = replace(label, timestamp=time.time())
        with self._lock:
            key = (label.trial_id, label.annotator)
            if key in self._seen:
                raise DuplicateLabelError(
                    f"label already recorded for trial {label.trial_id}"
                    f" by {label.annotator}"
                )
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(
                        json.dumps(
                            {
                                "trial_id": label.trial_id,
                                "annotator": label.annotator,
                                "label": label.label,
                                "timestamp": label.timestamp,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
                    fh.flush()
                    os.fsync(fh.fileno())
            self._seen.add(key)
            self._labels.append(label)
        return label

    def labels(self) -> list[AuditLabel]:
        with self._lock:
            return list(self._labels)
