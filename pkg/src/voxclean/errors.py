"""Exception hierarchy shared across the toolkit."""


class VoxcleanError(Exception):
    """Base class for all toolkit errors."""


class ManifestFormatError(VoxcleanError):
    """Manifest violates the TSV contract (missing column, bad header)."""


class RowError(VoxcleanError):
    """A single manifest row is malformed; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateIdError(VoxcleanError):
    """An utterance_id appeared more than once where uniqueness is required."""


class EmbeddingFormatError(VoxcleanError):
    """Embedding table file violates the interchange format."""


class DimensionMismatchError(VoxcleanError):
    """Vectors of unequal dimension were combined."""


class DegenerateInputError(VoxcleanError):
    """Numerically unusable input (zero-norm vector, empty group)."""


class EmptyInputError(VoxcleanError):
    """An operation requiring data received none."""


class ConsistencyError(VoxcleanError):
    """Cross-artifact references do not line up (missing decision, unknown trial)."""


class ContractError(VoxcleanError):
    """A caller violated an operation precondition."""


class SeparationError(VoxcleanError):
    """Logistic fit diverged: the data are perfectly separable."""


class UndefinedCrossoverError(VoxcleanError):
    """Crossover requested on a flat logistic fit (zero slope)."""


class InsufficientDataError(VoxcleanError):
    """Too few usable observations for the requested statistic."""


class DuplicateLabelError(VoxcleanError):
    """A (trial, annotator) label was re-submitted; the store is append-only."""


class GenerationError(VoxcleanError):
    """Synthetic corpus generation could not satisfy the requested parameters."""
