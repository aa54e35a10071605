"""Exception types raised across the package."""


class CtdnnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CtdnnError):
    """Operands have incompatible dimensions."""


class EmptyInputError(CtdnnError):
    """An operation that needs at least one row/element got none."""


class EvaluationError(CtdnnError):
    """A probed function returned a non-finite value."""


class SequenceTooShortError(CtdnnError):
    """Sequence has fewer frames than the context window span."""


class TopologyError(CtdnnError):
    """Branch count does not match the layer's unit count."""


class InsufficientStatsError(CtdnnError):
    """Too few frames to estimate batch statistics."""


class LabelError(CtdnnError):
    """Class label outside the valid range."""


class ArchSyntaxError(CtdnnError):
    """Architecture string does not match the grammar."""

    def __init__(self, position: int, expected: str):
        self.position = position
        self.expected = expected
        super().__init__(f"syntax error at position {position}: expected {expected}")


class ArchSemanticError(CtdnnError):
    """Architecture is grammatical but violates a composition rule."""

    def __init__(self, rule: str, detail: str):
        self.rule = rule
        super().__init__(f"rule '{rule}' violated: {detail}")


class CacheError(CtdnnError):
    """Backward pass got a cache that does not match the model or batch."""


class TrainingDivergenceError(CtdnnError):
    """Non-finite gradient encountered during optimization."""


class RankError(CtdnnError):
    """Requested projection dimension exceeds the achievable rank."""


class ConditioningError(CtdnnError):
    """Scatter matrix is singular; shrinkage needed."""


class UndefinedScoreError(CtdnnError):
    """Similarity is undefined (zero-norm vector)."""


class UnknownUtteranceError(CtdnnError):
    """Trial references an utterance id missing from the embedding store."""


class UnsupportedFormatError(CtdnnError):
    """Audio file uses a codec/layout outside the supported subset."""


class FormatError(CtdnnError):
    """Binary or text file violates its documented layout."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ValidationError(CtdnnError):
    """A configuration or dataset field fails its constraints."""


class ConfigError(CtdnnError):
    """Run-configuration file has unknown or malformed entries."""
