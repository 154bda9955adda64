"""Voice-embedding storage and cosine similarity.

The on-disk interchange format is deliberately dumb text so any external
extractor can produce it:

    dim<TAB>D
    utterance_id<TAB>v1 v2 ... vD
    ...

Values are decimal (fixed or scientific), single-space separated, UTF-8,
LF endings. Vectors are stored as float32 exactly as read; normalization
happens inside the similarity computation so source data round-trips
bit-exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Protocol

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DuplicateIdError,
    EmbeddingFormatError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingVector:
    utterance_id: str
    values: np.ndarray  # float32, shape (dim,)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.shape[0] < 1:
            raise EmbeddingFormatError(
                f"{self.utterance_id}: expected a 1-D vector, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise EmbeddingFormatError(f"{self.utterance_id}: non-finite value")


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, clamped to [-1, 1].

    Accumulation runs in double precision regardless of storage dtype;
    the clamp absorbs rounding overshoot (values like 1 + 2^-52) rather
    than treating it as an error.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim}")
    av = a.values.astype(np.float64)
    bv = b.values.astype(np.float64)
    norm_a = math.sqrt(float(np.dot(av, av)))
    norm_b = math.sqrt(float(np.dot(bv, bv)))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateInputError("zero-norm embedding")
    score = float(np.dot(av, bv)) / (norm_a * norm_b)
    return max(-1.0, min(1.0, score))


class EmbeddingProvider(Protocol):
    """Deterministic source of embeddings; abstracts over the extractor."""

    def get(self, utterance_id: str) -> EmbeddingVector | None: ...

    def dim(self) -> int: ...


class EmbeddingTable:
    """Immutable in-memory utterance_id -> vector map with a fixed dim."""

    def __init__(self, dim: int, entries: dict[str, EmbeddingVector] | None = None):
        if dim < 1:
            raise EmbeddingFormatError(f"dim must be positive, got {dim}")
        self._dim = dim
        self._entries: dict[str, EmbeddingVector] = {}
        for vec in (entries or {}).values():
            self.add(vec)

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self._entries

    def ids(self) -> list[str]:
        return list(self._entries)

    def add(self, vector: EmbeddingVector) -> None:
        if vector.dim != self._dim:
            raise DimensionMismatchError(
                f"{vector.utterance_id}: dim {vector.dim}, table dim {self._dim}"
            )
        if vector.utterance_id in self._entries:
            raise DuplicateIdError(f"duplicate utterance_id: {vector.utterance_id}")
        self._entries[vector.utterance_id] = vector

    def get(self, utterance_id: str) -> EmbeddingVector | None:
        return self._entries.get(utterance_id)


class TableProvider:
    def __init__(self, table: EmbeddingTable):
        self._table = table

    def get(self, utterance_id: str) -> EmbeddingVector | None:
        return self._table.get(utterance_id)

    def dim(self) -> int:
        return self._table.dim


def table_provider(table: EmbeddingTable) -> TableProvider:
    return TableProvider(table)


def load_embedding_table(path: str | Path | IO[bytes]) -> EmbeddingTable:
    """Read an embedding-table file, validating dim and finiteness per row."""
    if hasattr(path, "read"):
        raw = path.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    else:
        text = Path(path).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    lines = text.split("\n") if text else []
    if not lines:
        raise EmbeddingFormatError("empty file: missing dim header")

    header = lines[0].split("\t")
    if len(header) != 2 or header[0] != "dim":
        raise EmbeddingFormatError(f"bad header line: {lines[0]!r}")
    try:
        dim = int(header[1])
    except ValueError:
        raise EmbeddingFormatError(f"bad dim value: {header[1]!r}") from None

    table = EmbeddingTable(dim)
    for line_no, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EmbeddingFormatError(f"line {line_no}: expected id<TAB>values")
        utterance_id, blob = parts
        try:
            values = np.array([float(v) for v in blob.split(" ")], dtype=np.float32)
        except ValueError:
            raise EmbeddingFormatError(f"line {line_no}: unparsable value") from None
        if values.shape[0] != dim:
            raise EmbeddingFormatError(
                f"line {line_no}: {values.shape[0]} values under dim {dim} header"
            )
        if not np.all(np.isfinite(values)):
            raise EmbeddingFormatError(f"line {line_no}: non-finite value")
        table.add(EmbeddingVector(utterance_id, values))
    logger.info("loaded %d embeddings (dim %d)", len(table), dim)
    return table


def write_embedding_table(
    path: str | Path, dim: int, vectors: Iterable[EmbeddingVector]
) -> int:
    """Write the interchange format; returns the row count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim\t{dim}\n")
        for vec in vectors:
            if vec.dim != dim:
                raise DimensionMismatchError(
                    f"{vec.utterance_id}: dim {vec.dim}, declared {dim}"
                )
            blob = " ".join(repr(float(v)) for v in vec.values)
            fh.write(f"{vec.utterance_id}\t{blob}\n")
            count += 1
    return count
