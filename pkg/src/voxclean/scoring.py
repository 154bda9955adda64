"""Enrollment selection, pair generation, scoring, and score summaries.

For each client ID with at least two recordings the manifest-final recording
(greatest row_index) is the enrollment; every other recording of that client
becomes one test pair against it. Enrollment selection ignores the token
count: the enrollment anchors the client's dominant voice even when short.
Test records under the token minimum are carried as skipped pairs so pair
accounting stays exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingProvider, cosine_similarity
from .errors import EmptyInputError, ManifestFormatError
from .ingest import Eligibility, LanguageManifest

logger = logging.getLogger(__name__)

PAIRS_COLUMNS = ("language", "client_id", "enrollment_id", "test_id", "score", "status")

HISTOGRAM_BINS = 40
HISTOGRAM_LO = -1.0
HISTOGRAM_HI = 1.0


class PairStatus(str, Enum):
    SCORED = "scored"
    MISSING_ENROLLMENT_EMBEDDING = "missing_enrollment_embedding"
    MISSING_TEST_EMBEDDING = "missing_test_embedding"
    SKIPPED_TOO_SHORT = "skipped_too_short"
    UNSCORED = "unscored"  # generated but not yet passed through score_pairs


@dataclass(frozen=True)
class ScoredPair:
    language: str
    client_id: str
    enrollment_id: str
    test_id: str
    score: float | None
    status: PairStatus


@dataclass(frozen=True)
class ScoreSummary:
    language: str
    n: int
    q1: float
    median: float
    q3: float
    iqr: float
    histogram: tuple[int, ...]  # 40 bins of width 0.05 over [-1, 1]


def select_enrollment(
    manifest: LanguageManifest, eligibility: Sequence[Eligibility]
) -> dict[str, str]:
    """Map client_id -> enrollment utterance_id (manifest-final recording).

    Singleton clients are absent: with one recording there is nothing to
    compare against. The enrollment is chosen regardless of its token
    count; clients whose final recording is under the minimum are logged
    loudly so the exemption can be audited.
    """
    assignment: dict[str, str] = {}
    token_count: dict[str, int] = {}
    for record, tag in zip(manifest.records, eligibility):
        if tag is Eligibility.SINGLETON_CLIENT:
            continue
        # Records are in row_index order, so the last write wins the client.
        assignment[record.client_id] = record.utterance_id
        token_count[record.utterance_id] = record.token_count
    short = [c for c, u in assignment.items() if token_count[u] < 3]
    if short:
        logger.warning(
            "%s: %d enrollment recordings are under the 3-token minimum and"
            " were kept anyway (enrollments are exempt from the length rule):"
            " %s%s",
            manifest.language,
            len(short),
            ", ".join(sorted(short)[:5]),
            "..." if len(short) > 5 else "",
        )
    return assignment


def generate_pairs(
    manifest: LanguageManifest,
    assignment: dict[str, str],
    eligibility: Sequence[Eligibility],
) -> list[ScoredPair]:
    """One unscored pair per non-enrollment record of each assigned client.

    Deterministic order: client_id, then test row_index. Too-short test
    records become skipped_too_short pairs rather than disappearing.
    """
    by_client: dict[str, list[tuple[int, str]]] = {}
    tag_by_row = {r.row_index: t for r, t in zip(manifest.records, eligibility)}
    for record in manifest.records:
        if record.client_id in assignment:
            by_client.setdefault(record.client_id, []).append(
                (record.row_index, record.utterance_id)
            )

    pairs: list[ScoredPair] = []
    for client_id in sorted(by_client):
        enrollment_id = assignment[client_id]
        for row_index, utterance_id in by_client[client_id]:
            if utterance_id == enrollment_id:
                continue
            too_short = tag_by_row[row_index] is Eligibility.TOO_SHORT
            pairs.append(
                ScoredPair(
                    language=manifest.language,
                    client_id=client_id,
                    enrollment_id=enrollment_id,
                    test_id=utterance_id,
                    score=None,
                    status=PairStatus.SKIPPED_TOO_SHORT
                    if too_short
                    else PairStatus.UNSCORED,
                )
            )
    return pairs


def score_pairs(
    pairs: Iterable[ScoredPair], provider: EmbeddingProvider
) -> list[ScoredPair]:
    """Attach cosine scores; input order preserved, failures become statuses."""
    scored: list[ScoredPair] = []
    for pair in pairs:
        if pair.status is PairStatus.SKIPPED_TOO_SHORT:
            scored.append(pair)
            continue
        enrollment = provider.get(pair.enrollment_id)
        if enrollment is None:
            scored.append(
                replace(pair, score=None, status=PairStatus.MISSING_ENROLLMENT_EMBEDDING)
            )
            continue
        test = provider.get(pair.test_id)
        if test is None:
            scored.append(
                replace(pair, score=None, status=PairStatus.MISSING_TEST_EMBEDDING)
            )
            continue
        score = cosine_similarity(enrollment, test)
        scored.append(replace(pair, score=score, status=PairStatus.SCORED))
    return scored


def quantile_linear(values: Sequence[float], p: float) -> float:
    """Quantile with linear interpolation at index (n-1)p of the sorted data."""
    data = np.sort(np.asarray(values, dtype=np.float64))
    return float(np.quantile(data, p, method="linear"))


def histogram_bin(score: float) -> int:
    """Index of the 0.05-wide bin over [-1, 1]; the last bin is closed above."""
    if score >= HISTOGRAM_HI:
        return HISTOGRAM_BINS - 1
    idx = int((score - HISTOGRAM_LO) / 0.05)
    # Guard the float division against landing one bin off at a boundary.
    while idx > 0 and score < HISTOGRAM_LO + 0.05 * idx:
        idx -= 1
    while idx < HISTOGRAM_BINS - 1 and score >= HISTOGRAM_LO + 0.05 * (idx + 1):
        idx += 1
    return idx


def summarize_scores(
    pairs: Iterable[ScoredPair], group: str | None = None
) -> ScoreSummary:
    """Quartiles and a 40-bin histogram over the scored pairs of one group.

    group selects a language; None summarizes everything scored.
    """
    scores = [
        p.score
        for p in pairs
        if p.status is PairStatus.SCORED and (group is None or p.language == group)
    ]
    if not scores:
        raise EmptyInputError(f"no scored pairs in group {group or 'all'!r}")
    hist = [0] * HISTOGRAM_BINS
    for s in scores:
        hist[histogram_bin(s)] += 1
    q1 = quantile_linear(scores, 0.25)
    median = quantile_linear(scores, 0.5)
    q3 = quantile_linear(scores, 0.75)
    return ScoreSummary(
        language=group or "all",
        n=len(scores),
        q1=q1,
        median=median,
        q3=q3,
        iqr=q3 - q1,
        histogram=tuple(hist),
    )


def format_score(score: float | None) -> str:
    return "" if score is None else f"{score:.6f}"


def write_pairs_tsv(path: str | Path | IO[str], pairs: Iterable[ScoredPair]) -> int:
    """Released-scores artifact: one pair per row, empty score when absent."""
    own = not hasattr(path, "write")
    fh = open(path, "w", encoding="utf-8", newline="\n") if own else path
    try:
        fh.write("\t".join(PAIRS_COLUMNS) + "\n")
        count = 0
        for p in pairs:
            fh.write(
                "\t".join(
                    (
                        p.language,
                        p.client_id,
                        p.enrollment_id,
                        p.test_id,
                        format_score(p.score),
                        p.status.value,
                    )
                )
                + "\n"
            )
            count += 1
        return count
    finally:
        if own:
            fh.close()


def read_pairs_tsv(path: str | Path) -> list[ScoredPair]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.replace("\r\n", "\n").rstrip("\n").split("\n")
    if not lines or lines[0].split("\t") != list(PAIRS_COLUMNS):
        raise ManifestFormatError("bad pairs file header")
    pairs = []
    for line in lines[1:]:
        if line == "":
            continue
        language, client_id, enrollment_id, test_id, score, status = line.split("\t")
        pairs.append(
            ScoredPair(
                language=language,
                client_id=client_id,
                enrollment_id=enrollment_id,
                test_id=test_id,
                score=float(score) if score else None,
                status=PairStatus(status),
            )
        )
    return pairs
