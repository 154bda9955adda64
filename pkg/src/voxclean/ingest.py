"""Manifest parsing, tokenization policy, and per-record eligibility.

Input manifests follow the Common Voice convention: UTF-8 TSV, header row,
unquoted fields, one validated utterance per row. Required columns are
``client_id``, ``path`` (the clip filename, used as the utterance id) and
``sentence``; an optional ``token_count`` column overrides the built-in
tokenizers for languages whose word counts were precomputed externally.
"""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable

from .errors import DuplicateIdError, ManifestFormatError, RowError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("client_id", "path", "sentence")
TOKEN_COUNT_COLUMN = "token_count"

# Languages whose orthography carries no whitespace between words; matched on
# the primary subtag so e.g. zh-CN, zh-TW and yue all resolve to per-character.
PER_CHARACTER_LANGUAGES = frozenset({"yue", "zh", "th", "ja"})

MIN_TOKENS = 3


class TokenizerMode(str, Enum):
    WHITESPACE = "whitespace"
    PER_CHARACTER = "per_character"


class Eligibility(str, Enum):
    ELIGIBLE = "eligible"
    TOO_SHORT = "too_short"
    SINGLETON_CLIENT = "singleton_client"


@dataclass(frozen=True)
class TokenizerPolicy:
    mode: TokenizerMode
    language: str

    @classmethod
    def for_language(cls, language: str) -> "TokenizerPolicy":
        """Default policy: per-character for whitespace-less languages."""
        primary = language.split("-")[0].lower()
        if primary in PER_CHARACTER_LANGUAGES:
            return cls(TokenizerMode.PER_CHARACTER, language)
        return cls(TokenizerMode.WHITESPACE, language)


@dataclass(frozen=True)
class UtteranceRecord:
    client_id: str
    utterance_id: str
    sentence: str
    language: str
    token_count: int
    row_index: int
    extras: tuple[tuple[str, str], ...] = ()

    def extra(self, column: str) -> str | None:
        for key, value in self.extras:
            if key == column:
                return value
        return None


@dataclass
class LanguageManifest:
    language: str
    records: list[UtteranceRecord]
    policy: TokenizerPolicy
    source_version: str = ""
    columns: list[str] = field(default_factory=lambda: list(REQUIRED_COLUMNS))

    def __len__(self) -> int:
        return len(self.records)

    def by_utterance(self) -> dict[str, UtteranceRecord]:
        return {r.utterance_id: r for r in self.records}


def count_tokens(sentence: str, policy: TokenizerPolicy) -> int:
    """Token count under the policy.

    Whitespace mode counts maximal non-whitespace runs. Per-character mode
    counts characters that are neither whitespace nor punctuation/symbols
    (Unicode general categories P* and S*), an approximation that is monotone
    in true word count for the whitespace-less languages.
    """
    if policy.mode is TokenizerMode.WHITESPACE:
        return len(sentence.split())
    count = 0
    for ch in sentence:
        if ch.isspace():
            continue
        if unicodedata.category(ch)[0] in ("P", "S"):
            continue
        count += 1
    return count


def _decode_lines(tsv_bytes: bytes | IO[bytes]) -> list[str]:
    if hasattr(tsv_bytes, "read"):
        raw = tsv_bytes.read()
    else:
        raw = tsv_bytes
    text = raw.decode("utf-8")
    # Normalize CRLF, drop a trailing newline so we do not see a phantom row.
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n") if text else []


def parse_manifest(
    tsv_bytes: bytes | IO[bytes],
    language: str,
    policy: TokenizerPolicy | None = None,
    source_version: str = "",
) -> LanguageManifest:
    """Parse a validated-utterance TSV into a LanguageManifest.

    Raises ManifestFormatError for a bad header, RowError for a malformed
    row (carrying its 1-based line number), DuplicateIdError for repeated
    utterance ids.
    """
    if policy is None:
        policy = TokenizerPolicy.for_language(language)

    lines = _decode_lines(tsv_bytes)
    if not lines:
        raise ManifestFormatError("empty input: missing header row")

    columns = lines[0].split("\t")
    for col in REQUIRED_COLUMNS:
        if col not in columns:
            raise ManifestFormatError(f"missing required column: {col}")
    col_index = {name: i for i, name in enumerate(columns)}
    has_override = TOKEN_COUNT_COLUMN in col_index
    extra_columns = [
        c for c in columns if c not in REQUIRED_COLUMNS and c != TOKEN_COUNT_COLUMN
    ]

    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != len(columns):
            raise RowError(
                f"expected {len(columns)} fields, found {len(fields)}", line_no
            )
        utterance_id = fields[col_index["path"]]
        client_id = fields[col_index["client_id"]]
        sentence = fields[col_index["sentence"]]
        if not utterance_id:
            raise RowError("empty path field", line_no)
        if not client_id:
            raise RowError("empty client_id field", line_no)
        if utterance_id in seen:
            raise DuplicateIdError(f"duplicate utterance_id: {utterance_id}")
        seen.add(utterance_id)

        if has_override and fields[col_index[TOKEN_COUNT_COLUMN]] != "":
            try:
                token_count = int(fields[col_index[TOKEN_COUNT_COLUMN]])
            except ValueError:
                raise RowError(
                    f"non-integer {TOKEN_COUNT_COLUMN}:"
                    f" {fields[col_index[TOKEN_COUNT_COLUMN]]!r}",
                    line_no,
                ) from None
            if token_count < 0:
                raise RowError(f"negative {TOKEN_COUNT_COLUMN}", line_no)
        else:
            token_count = count_tokens(sentence, policy)

        extras = tuple((c, fields[col_index[c]]) for c in extra_columns)
        records.append(
            UtteranceRecord(
                client_id=client_id,
                utterance_id=utterance_id,
                sentence=sentence,
                language=language,
                token_count=token_count,
                row_index=len(records),
                extras=extras,
            )
        )

    return LanguageManifest(
        language=language,
        records=records,
        policy=policy,
        source_version=source_version,
        columns=columns,
    )


def mark_eligibility(manifest: LanguageManifest) -> list[Eligibility]:
    """Tag each record eligible / too_short / singleton_client.

    Tags are returned in manifest order (index == row_index). A singleton
    tag takes precedence over too_short for reporting; both exclusions are
    applied downstream regardless of this ordering.
    """
    multiplicity = Counter(r.client_id for r in manifest.records)
    tags: list[Eligibility] = []
    for record in manifest.records:
        if multiplicity[record.client_id] == 1:
            tags.append(Eligibility.SINGLETON_CLIENT)
        elif record.token_count < MIN_TOKENS:
            tags.append(Eligibility.TOO_SHORT)
        else:
            tags.append(Eligibility.ELIGIBLE)
    return tags


def eligibility_counts(tags: Iterable[Eligibility]) -> dict[str, int]:
    counts = Counter(tag.value for tag in tags)
    return {e.value: counts.get(e.value, 0) for e in Eligibility}
