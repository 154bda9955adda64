"""Speaker-heterogeneity quantification and cleaning for crowdsourced corpora.

Pipeline: parse validated-utterance manifests, cosine-score every recording
against its client's enrollment recording, calibrate an exclusion threshold
from a blinded human audit (logistic crossover), and export cleaned
manifests with per-language and per-client loss reports. A synthetic
benchmark with known speaker ground truth closes the loop.
"""

from .cleaning import (
    CleaningDecision,
    CleaningReport,
    Decision,
    ExportMode,
    ThresholdPolicy,
    ThresholdProvenance,
    apply_threshold,
    data_loss_report,
    export_cleaned_manifest,
)
from .embeddings import (
    EmbeddingTable,
    EmbeddingVector,
    cosine_similarity,
    load_embedding_table,
    table_provider,
)
from .ingest import (
    Eligibility,
    LanguageManifest,
    TokenizerMode,
    TokenizerPolicy,
    UtteranceRecord,
    count_tokens,
    mark_eligibility,
    parse_manifest,
)
from .scoring import (
    PairStatus,
    ScoredPair,
    ScoreSummary,
    generate_pairs,
    score_pairs,
    select_enrollment,
    summarize_scores,
)

__version__ = "0.1.0"

__all__ = [
    "CleaningDecision",
    "CleaningReport",
    "Decision",
    "Eligibility",
    "EmbeddingTable",
    "EmbeddingVector",
    "ExportMode",
    "LanguageManifest",
    "PairStatus",
    "ScoreSummary",
    "ScoredPair",
    "ThresholdPolicy",
    "ThresholdProvenance",
    "TokenizerMode",
    "TokenizerPolicy",
    "UtteranceRecord",
    "apply_threshold",
    "cosine_similarity",
    "count_tokens",
    "data_loss_report",
    "export_cleaned_manifest",
    "generate_pairs",
    "load_embedding_table",
    "mark_eligibility",
    "parse_manifest",
    "score_pairs",
    "select_enrollment",
    "summarize_scores",
    "table_provider",
]
