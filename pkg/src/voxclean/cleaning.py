"""Threshold decisions, data-loss reporting, and cleaned-manifest export.

A scored pair is kept when its score is at or above the threshold (the
boundary accepts the same-speaker hypothesis) and excluded below it.
Unscored pairs (short test utterances, missing embeddings) are retained and
flagged, never silently dropped, and each client's enrollment recording is
always kept: it is the reference, so a client whose every test pair fails
surfaces as 100% loss instead of vanishing.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import ConsistencyError, ContractError, EmptyInputError, ManifestFormatError
from .ingest import TOKEN_COUNT_COLUMN, LanguageManifest
from .scoring import PairStatus, ScoredPair

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.354
DEFAULT_CLIENT_FLAG_THRESHOLD = 0.10

ANNOTATION_COLUMNS = ("similarity_score", "decision")


class ThresholdProvenance(str, Enum):
    AUDITED_CROSSOVER = "audited_crossover"
    EER_DERIVED = "eer_derived"
    USER_SET = "user_set"


class Decision(str, Enum):
    KEEP = "keep"
    EXCLUDE = "exclude"
    UNSCORED_KEEP = "unscored_keep"
    ENROLLMENT_KEEP = "enrollment_keep"


@dataclass(frozen=True)
class ThresholdPolicy:
    tau: float = DEFAULT_TAU
    provenance: ThresholdProvenance = ThresholdProvenance.AUDITED_CROSSOVER

    def __post_init__(self):
        if not math.isfinite(self.tau):
            raise ContractError(f"tau must be finite, got {self.tau}")


@dataclass(frozen=True)
class CleaningDecision:
    test_id: str
    client_id: str
    language: str
    decision: Decision
    score: float | None = None


@dataclass(frozen=True)
class GroupLoss:
    total: int  # scored pairs in the group
    excluded: int

    @property
    def loss_proportion(self) -> float:
        return self.excluded / self.total


@dataclass(frozen=True)
class ClientLoss(GroupLoss):
    flagged: bool = False


@dataclass
class CleaningReport:
    languages: dict[str, GroupLoss]
    clients: dict[tuple[str, str], ClientLoss]  # (language, client_id)
    flag_threshold: float
    n_clients_manifest: int  # all client ids in the manifests, pre-exclusions

    @property
    def corpus_total(self) -> int:
        return sum(g.total for g in self.languages.values())

    @property
    def corpus_excluded(self) -> int:
        return sum(g.excluded for g in self.languages.values())

    @property
    def median_language_loss(self) -> float:
        return statistics.median(g.loss_proportion for g in self.languages.values())

    @property
    def mean_language_loss(self) -> float:
        return statistics.mean(g.loss_proportion for g in self.languages.values())

    @property
    def languages_under_10pct(self) -> int:
        return sum(1 for g in self.languages.values() if g.loss_proportion < 0.10)

    @property
    def clients_within_10pct(self) -> int:
        return sum(1 for c in self.clients.values() if c.loss_proportion <= 0.10)

    def to_dict(self) -> dict:
        scored_clients = len(self.clients)
        within = self.clients_within_10pct
        return {
            "languages": {
                lang: {
                    "utterances_total": g.total,
                    "utterances_excluded": g.excluded,
                    "loss_proportion": g.loss_proportion,
                }
                for lang, g in sorted(self.languages.items())
            },
            "clients": {
                lang: {
                    client: {
                        "total": c.total,
                        "excluded": c.excluded,
                        "loss_proportion": c.loss_proportion,
                        "flagged": c.flagged,
                    }
                    for (l2, client), c in sorted(self.clients.items())
                    if l2 == lang
                }
                for lang in sorted({l for l, _ in self.clients})
            },
            "aggregate": {
                "corpus_total": self.corpus_total,
                "corpus_excluded": self.corpus_excluded,
                "median_language_loss": self.median_language_loss,
                "mean_language_loss": self.mean_language_loss,
                "languages_under_10pct_loss": self.languages_under_10pct,
                "n_languages": len(self.languages),
                "flag_threshold": self.flag_threshold,
                "clients_within_10pct_loss": within,
                # Both denominators: clients that reached scoring, and every
                # client id seen in the manifests before exclusions.
                "n_clients_scored": scored_clients,
                "n_clients_manifest": self.n_clients_manifest,
                "share_within_10pct_of_scored": (
                    within / scored_clients if scored_clients else None
                ),
                "share_within_10pct_of_manifest": (
                    within / self.n_clients_manifest
                    if self.n_clients_manifest
                    else None
                ),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"{'language':<12} {'scored':>10} {'excluded':>10} {'loss':>8}",
        ]
        for lang, g in sorted(self.languages.items()):
            lines.append(
                f"{lang:<12} {g.total:>10} {g.excluded:>10} {g.loss_proportion:>8.4f}"
            )
        agg = self.to_dict()["aggregate"]
        lines.append("")
        lines.append(f"corpus: {agg['corpus_excluded']}/{agg['corpus_total']} excluded")
        lines.append(
            f"language loss median {agg['median_language_loss']:.4f}"
            f" mean {agg['mean_language_loss']:.4f};"
            f" {agg['languages_under_10pct_loss']}/{agg['n_languages']}"
            " languages under 10% loss"
        )
        lines.append(
            f"clients within 10% loss: {agg['clients_within_10pct_loss']}"
            f" of {agg['n_clients_scored']} scored"
            f" ({agg['n_clients_manifest']} in manifest)"
        )
        return "\n".join(lines)


def apply_threshold(
    pairs: Sequence[ScoredPair], policy: ThresholdPolicy
) -> list[CleaningDecision]:
    """Decide every pair and emit one enrollment_keep per client."""
    decisions: list[CleaningDecision] = []
    enrollments_seen: set[tuple[str, str, str]] = set()
    for pair in pairs:
        key = (pair.language, pair.client_id, pair.enrollment_id)
        if key not in enrollments_seen:
            enrollments_seen.add(key)
            decisions.append(
                CleaningDecision(
                    test_id=pair.enrollment_id,
                    client_id=pair.client_id,
                    language=pair.language,
                    decision=Decision.ENROLLMENT_KEEP,
                )
            )
        if pair.status is PairStatus.SCORED:
            verdict = Decision.KEEP if pair.score >= policy.tau else Decision.EXCLUDE
            decisions.append(
                CleaningDecision(
                    test_id=pair.test_id,
                    client_id=pair.client_id,
                    language=pair.language,
                    decision=verdict,
                    score=pair.score,
                )
            )
        else:
            decisions.append(
                CleaningDecision(
                    test_id=pair.test_id,
                    client_id=pair.client_id,
                    language=pair.language,
                    decision=Decision.UNSCORED_KEEP,
                )
            )
    return decisions


def data_loss_report(
    decisions: Sequence[CleaningDecision],
    manifests: LanguageManifest | Sequence[LanguageManifest],
    flag_threshold: float = DEFAULT_CLIENT_FLAG_THRESHOLD,
) -> CleaningReport:
    """Aggregate keep/exclude decisions into per-language and per-client loss.

    Denominators count scored pairs only; unscored decisions do not dilute
    the proportions.
    """
    if isinstance(manifests, LanguageManifest):
        manifests = [manifests]
    scored = [
        d for d in decisions if d.decision in (Decision.KEEP, Decision.EXCLUDE)
    ]
    if not scored:
        raise EmptyInputError("no scored decisions to report on")

    lang_total: dict[str, int] = {}
    lang_excluded: dict[str, int] = {}
    client_total: dict[tuple[str, str], int] = {}
    client_excluded: dict[tuple[str, str], int] = {}
    for d in scored:
        lang_total[d.language] = lang_total.get(d.language, 0) + 1
        ckey = (d.language, d.client_id)
        client_total[ckey] = client_total.get(ckey, 0) + 1
        if d.decision is Decision.EXCLUDE:
            lang_excluded[d.language] = lang_excluded.get(d.language, 0) + 1
            client_excluded[ckey] = client_excluded.get(ckey, 0) + 1

    languages = {
        lang: GroupLoss(total=n, excluded=lang_excluded.get(lang, 0))
        for lang, n in lang_total.items()
    }
    clients = {}
    for ckey, n in client_total.items():
        excluded = client_excluded.get(ckey, 0)
        clients[ckey] = ClientLoss(
            total=n, excluded=excluded, flagged=(excluded / n) >= flag_threshold
        )

    all_clients = {
        (m.language, r.client_id) for m in manifests for r in m.records
    }
    return CleaningReport(
        languages=languages,
        clients=clients,
        flag_threshold=flag_threshold,
        n_clients_manifest=len(all_clients),
    )


class ExportMode(str, Enum):
    DROP_EXCLUDED = "drop_excluded"
    ANNOTATE_ONLY = "annotate_only"


def export_cleaned_manifest(
    manifest: LanguageManifest,
    decisions: Iterable[CleaningDecision],
    mode: ExportMode,
) -> str:
    """Re-emit the manifest TSV with decisions applied.

    annotate_only appends similarity_score and decision columns to every
    original row; drop_excluded removes excluded rows and keeps the original
    columns. Opaque columns and their order are preserved either way.
    """
    by_test: dict[str, CleaningDecision] = {}
    for d in decisions:
        if d.language != manifest.language:
            continue
        by_test[d.test_id] = d

    columns = list(manifest.columns)
    if mode is ExportMode.ANNOTATE_ONLY:
        for col in ANNOTATION_COLUMNS:
            if col in columns:
                raise ManifestFormatError(
                    f"manifest already has a column named {col}"
                )

    multiplicity: dict[str, int] = {}
    for record in manifest.records:
        multiplicity[record.client_id] = multiplicity.get(record.client_id, 0) + 1

    out_lines = []
    header = columns + list(ANNOTATION_COLUMNS) if mode is ExportMode.ANNOTATE_ONLY else columns
    out_lines.append("\t".join(header))
    for record in manifest.records:
        decision = by_test.get(record.utterance_id)
        if decision is None and multiplicity[record.client_id] >= 2:
            raise ConsistencyError(
                f"no decision for scorable row: {record.utterance_id}"
            )
        if mode is ExportMode.DROP_EXCLUDED and decision is not None:
            if decision.decision is Decision.EXCLUDE:
                continue
        cells = []
        for col in columns:
            if col == "client_id":
                cells.append(record.client_id)
            elif col == "path":
                cells.append(record.utterance_id)
            elif col == "sentence":
                cells.append(record.sentence)
            elif col == TOKEN_COUNT_COLUMN:
                cells.append(str(record.token_count))
            else:
                cells.append(record.extra(col) or "")
        if mode is ExportMode.ANNOTATE_ONLY:
            if decision is None:
                cells.extend(["", ""])
            else:
                score = "" if decision.score is None else f"{decision.score:.6f}"
                cells.extend([score, decision.decision.value])
        out_lines.append("\t".join(cells))
    return "\n".join(out_lines) + "\n"
