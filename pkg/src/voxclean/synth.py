"""Synthetic corpora with known speaker ground truth.

Speakers are unit vectors drawn uniformly on the sphere; utterances are the
speaker mean plus Gaussian coordinate noise, renormalized. Concentration is
controlled monotonically by noise_sigma, which is all the oracle role needs.
Contamination moves recordings from a donor speaker's pool into a victim
client ID, so the victim contains utterances from two true speakers while
its manifest-final (enrollment) recording stays with the original voice.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cleaning import CleaningDecision, Decision
from .calibration import ErrorRates, compute_eer
from .embeddings import EmbeddingTable, EmbeddingVector
from .errors import ConsistencyError, ContractError, GenerationError
from .ingest import REQUIRED_COLUMNS, LanguageManifest, TokenizerMode, TokenizerPolicy, UtteranceRecord
from .scoring import PairStatus, ScoredPair

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int
    utts_per_speaker: int
    dim: int
    noise_sigma: float = 0.0
    contamination_rate: float = 0.0
    contamination_fraction: float = 0.5
    seed: int = 0
    language: str = "syn"

    def __post_init__(self):
        if self.n_speakers < 1 or self.utts_per_speaker < 1:
            raise ContractError("need at least one speaker and one utterance")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be nonnegative")
        if not 0.0 <= self.contamination_rate <= 1.0:
            raise ContractError("contamination_rate must be in [0, 1]")
        if not 0.0 < self.contamination_fraction < 1.0:
            raise ContractError("contamination_fraction must be in (0, 1)")


@dataclass
class GroundTruth:
    speaker_of: dict[str, str]  # utterance_id -> true speaker
    client_speakers: dict[str, set[str]] = field(default_factory=dict)

    def recompute_clients(self, manifest: LanguageManifest) -> None:
        clients: dict[str, set[str]] = {}
        for record in manifest.records:
            if record.utterance_id not in self.speaker_of:
                raise ConsistencyError(
                    f"truth missing utterance: {record.utterance_id}"
                )
            clients.setdefault(record.client_id, set()).add(
                self.speaker_of[record.utterance_id]
            )
        self.client_speakers = clients


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_corpus(
    config: SynthConfig,
    speaker_means: np.ndarray | None = None,
) -> tuple[LanguageManifest, EmbeddingTable, GroundTruth]:
    """Build a manifest, embedding table, and ground truth from the config.

    speaker_means optionally pins the mean directions (rows; normalized
    here), which makes separation-controlled corpora easy to construct.
    Everything else is drawn from one seeded generator, so equal seeds give
    byte-identical artifacts.
    """
    if config.dim < 2:
        raise ContractError("dim must be at least 2")
    rng = np.random.default_rng(config.seed)

    if speaker_means is not None:
        means = np.asarray(speaker_means, dtype=np.float64)
        if means.shape != (config.n_speakers, config.dim):
            raise ContractError(
                f"speaker_means shape {means.shape}, expected"
                f" {(config.n_speakers, config.dim)}"
            )
        means = np.stack([_unit(m) for m in means])
    else:
        means = np.stack(
            [_unit(rng.standard_normal(config.dim)) for _ in range(config.n_speakers)]
        )

    records: list[UtteranceRecord] = []
    truth = GroundTruth(speaker_of={})
    table = EmbeddingTable(config.dim)
    for s in range(config.n_speakers):
        speaker_id = f"speaker_{s:05d}"
        client_id = f"client_{s:05d}"
        for u in range(config.utts_per_speaker):
            utterance_id = f"utt_{s:05d}_{u:03d}"
            raw = means[s] + config.noise_sigma * rng.standard_normal(config.dim)
            norm = float(np.linalg.norm(raw))
            while norm < 1e-9:  # vanishing draw: resample deterministically
                raw = means[s] + config.noise_sigma * rng.standard_normal(config.dim)
                norm = float(np.linalg.norm(raw))
            table.add(EmbeddingVector(utterance_id, (raw / norm).astype(np.float32)))
            sentence = f"synthetic speech sample {s} {u}"
            records.append(
                UtteranceRecord(
                    client_id=client_id,
                    utterance_id=utterance_id,
                    sentence=sentence,
                    language=config.language,
                    token_count=len(sentence.split()),
                    row_index=len(records),
                )
            )
            truth.speaker_of[utterance_id] = speaker_id

    manifest = LanguageManifest(
        language=config.language,
        records=records,
        policy=TokenizerPolicy(TokenizerMode.WHITESPACE, config.language),
        source_version=f"synth-seed-{config.seed}",
        columns=list(REQUIRED_COLUMNS),
    )
    truth.recompute_clients(manifest)
    return manifest, table, truth


def contaminate(
    manifest: LanguageManifest,
    truth: GroundTruth,
    rate: float,
    fraction: float,
    seed: int = 0,
) -> tuple[LanguageManifest, GroundTruth]:
    """Inject intruder recordings into a sample of client IDs.

    ceil(rate * n_clients) clients are chosen; each receives
    ceil(fraction * k) recordings (k being its record count) moved in from
    one donor client with enough spare non-final recordings. Donors are
    drawn uniformly among clients with sufficient capacity; if none has
    enough, generation fails rather than silently under-contaminating. The
    recipient's final (enrollment) recording always stays original.
    """
    client_order: list[str] = []
    blocks: dict[str, list[UtteranceRecord]] = {}
    for record in manifest.records:
        if record.client_id not in blocks:
            blocks[record.client_id] = []
            client_order.append(record.client_id)
        blocks[record.client_id].append(record)

    if len(client_order) < 2:
        raise ContractError("contamination needs at least 2 clients")

    n_contaminated = math.ceil(rate * len(client_order))
    new_truth = GroundTruth(speaker_of=dict(truth.speaker_of))
    if n_contaminated == 0:
        result = LanguageManifest(
            language=manifest.language,
            records=list(manifest.records),
            policy=manifest.policy,
            source_version=manifest.source_version,
            columns=list(manifest.columns),
        )
        new_truth.recompute_clients(result)
        return result, new_truth

    rng = np.random.default_rng(seed)
    chosen_idx = sorted(
        rng.choice(len(client_order), size=n_contaminated, replace=False)
    )
    contaminated = [client_order[i] for i in chosen_idx]

    # Donor capacity: a donor can give away its own non-final recordings.
    pools: dict[str, list[UtteranceRecord]] = {
        c: list(blocks[c][:-1]) for c in client_order
    }
    received: dict[str, list[UtteranceRecord]] = {c: [] for c in client_order}
    donated: dict[str, set[str]] = {c: set() for c in client_order}

    for client in contaminated:
        k = len(blocks[client])
        m = math.ceil(fraction * k)
        eligible = [
            c for c in client_order if c != client and len(pools[c]) >= m
        ]
        if not eligible:
            raise GenerationError(
                f"no donor has {m} spare recordings for client {client};"
                " lower the contamination fraction"
            )
        donor = eligible[int(rng.integers(len(eligible)))]
        take_idx = sorted(rng.choice(len(pools[donor]), size=m, replace=False))
        taken = [pools[donor][i] for i in take_idx]
        pools[donor] = [r for i, r in enumerate(pools[donor]) if i not in set(take_idx)]
        donated[donor].update(r.utterance_id for r in taken)
        received[client].extend(taken)

    records: list[UtteranceRecord] = []
    for client in client_order:
        own = [r for r in blocks[client] if r.utterance_id not in donated[client]]
        body, final = own[:-1], own[-1]
        for r in body + received[client] + [final]:
            records.append(replace(r, client_id=client, row_index=len(records)))

    result = LanguageManifest(
        language=manifest.language,
        records=records,
        policy=manifest.policy,
        source_version=manifest.source_version + "+contaminated",
        columns=list(manifest.columns),
    )
    new_truth.recompute_clients(result)
    return result, new_truth


@dataclass(frozen=True)
class CleaningEvaluation:
    precision: float
    recall: float
    f1: float
    n_excluded: int
    n_intruders: int
    oracle: ErrorRates | None = None


def evaluate_cleaning(
    decisions: Sequence[CleaningDecision],
    truth: GroundTruth,
    pairs: Sequence[ScoredPair] | None = None,
) -> CleaningEvaluation:
    """Score intruder exclusion against ground truth.

    An intruder is a non-enrollment record whose true speaker differs from
    the true speaker of its client's enrollment recording. Conventions:
    precision is 1 when nothing was excluded, recall is 1 when there are no
    intruders, and F1 is 0 when precision + recall is 0. When scored pairs
    are supplied, their truth-labeled EER is computed as the oracle curve.
    """
    enrollment_speaker: dict[str, str] = {}
    for d in decisions:
        if d.decision is Decision.ENROLLMENT_KEEP:
            speaker = truth.speaker_of.get(d.test_id)
            if speaker is None:
                raise ConsistencyError(f"truth missing utterance: {d.test_id}")
            enrollment_speaker[d.client_id] = speaker

    tp = fp = fn = 0
    for d in decisions:
        if d.decision is Decision.ENROLLMENT_KEEP:
            continue
        speaker = truth.speaker_of.get(d.test_id)
        if speaker is None:
            raise ConsistencyError(f"truth missing utterance: {d.test_id}")
        anchor = enrollment_speaker.get(d.client_id)
        if anchor is None:
            raise ConsistencyError(f"no enrollment decision for {d.client_id}")
        intruder = speaker != anchor
        excluded = d.decision is Decision.EXCLUDE
        if excluded and intruder:
            tp += 1
        elif excluded and not intruder:
            fp += 1
        elif not excluded and intruder:
            fn += 1

    precision = 1.0 if (tp + fp) == 0 else tp / (tp + fp)
    recall = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if (precision + recall) == 0 else 2 * precision * recall / (precision + recall)

    oracle = None
    if pairs is not None:
        same, diff = [], []
        for p in pairs:
            if p.status is not PairStatus.SCORED:
                continue
            s_test = truth.speaker_of.get(p.test_id)
            s_enroll = truth.speaker_of.get(p.enrollment_id)
            if s_test is None or s_enroll is None:
                raise ConsistencyError("truth missing a paired utterance")
            (same if s_test == s_enroll else diff).append(p.score)
        if same and diff:
            oracle = compute_eer(same, diff)
        else:
            logger.info("evaluate_cleaning: single-class pairs, no oracle EER")

    return CleaningEvaluation(
        precision=precision,
        recall=recall,
        f1=f1,
        n_excluded=tp + fp,
        n_intruders=tp + fn,
        oracle=oracle,
    )


def manifest_tsv(manifest: LanguageManifest) -> str:
    """Serialize a synthetic manifest in the ingest TSV format."""
    lines = ["\t".join(manifest.columns)]
    for r in manifest.records:
        cells = []
        for col in manifest.columns:
            if col == "client_id":
                cells.append(r.client_id)
            elif col == "path":
                cells.append(r.utterance_id)
            elif col == "sentence":
                cells.append(r.sentence)
            else:
                cells.append(r.extra(col) or "")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def write_truth_jsonl(path, truth: GroundTruth) -> None:
    import json

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utterance_id in sorted(truth.speaker_of):
            fh.write(
                json.dumps(
                    {"utterance_id": utterance_id,
                     "speaker": truth.speaker_of[utterance_id]},
                    sort_keys=True,
                )
                + "\n"
            )


def read_truth_jsonl(path) -> GroundTruth:
    import json
    from pathlib import Path

    speaker_of = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        speaker_of[d["utterance_id"]] = d["speaker"]
    return GroundTruth(speaker_of=speaker_of)
