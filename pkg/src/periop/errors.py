"""Exception hierarchy for the engine.

Every failure the pipeline is contractually allowed to degrade on has its
own type so callers can branch without string matching.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class ConfigError(EngineError):
    """Engine configuration is invalid; startup must refuse."""


class BackendError(EngineError):
    """Text generation failed after the configured retries."""


class ScriptExhaustedError(BackendError):
    """A scripted entry ran out of responses, or no entry matched the stage tag."""


class TransportError(BackendError):
    """HTTP backend transport failure."""


class ParseError(EngineError):
    """A structured backend response was unreadable."""


class ClassificationError(EngineError):
    """Task classification failed via both backend and keyword fallback."""


class EmptySearchError(EngineError):
    """All plan expansions failed before any beam existed."""


class SessionClosedError(EngineError):
    """Write attempted on a finalized session's working memory."""


class EmbedError(EngineError):
    """Embedding computation failed."""


class NoRecordsError(EngineError):
    """The patient has zero clinical records in the long-term store."""


class FormatError(EngineError):
    """A corpus or script document is malformed; message carries file/record diagnostics."""


class ToolError(EngineError):
    """A single evidence tool failed; callers skip the tool."""


class InvalidTargetError(EngineError):
    """A feedback directive targets a section that does not exist."""


class IllegalTransitionError(EngineError):
    """A session phase transition outside the declared graph was requested."""


class SessionNotFoundError(EngineError):
    """Unknown session id."""


class UnknownPatientError(EngineError):
    """Referenced patient is not in the ingested corpus."""


class WeightError(EngineError):
    """Metric weights do not sum to 1."""


class EmptyReferenceError(EngineError):
    """A set metric was asked to divide by an empty reference set."""


class ZeroDenominatorError(EngineError):
    """A rate metric has a zero denominator; treated as undefined, not 0."""


class ZeroVectorError(EngineError):
    """Cosine similarity of a zero vector is undefined."""


class DimensionMismatchError(EngineError):
    """Vectors of different dimensions cannot be compared."""
