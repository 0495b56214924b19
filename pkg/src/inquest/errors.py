"""Exception types shared across the engine.

Every error raised on purpose by inquest derives from `EngineError`, so
callers (and the CLI exit-code mapper) can distinguish engine failures
from genuine bugs.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


# --- documents ---------------------------------------------------------


class UnknownCounter(EngineError):
    """A token-counter handle that was never registered."""


class EmptyDocument(EngineError):
    """The paper body contains no paragraphs."""


class PaperInputError(EngineError):
    """A paper directory is missing files or holds unusable metadata."""


# --- question tree -----------------------------------------------------


class DepthOutOfRange(EngineError):
    """Depth outside the valid 1 .. d_max-1 range for the width schedule."""


class DepthExceeded(EngineError):
    """Attaching children would exceed the configured maximum depth."""


class WidthExceeded(EngineError):
    """More initial children than the width schedule allows."""


class ExpansionExhausted(EngineError):
    """A node's single follow-up expansion round was already used."""


class TreeStateError(EngineError):
    """A node was asked to do something its lifecycle state forbids."""


# --- gateway -----------------------------------------------------------


class UnknownTemplate(EngineError):
    """Template id not present in the prompt catalog."""


class MissingVariable(EngineError):
    """A template placeholder was left unbound."""


class ProviderError(EngineError):
    """The completion provider failed after all retries."""


class Timeout(ProviderError):
    """The provider did not answer within the configured deadline."""


class BudgetExceeded(EngineError):
    """The run-level token cap was hit."""


class MalformedOutput(EngineError):
    """Model output could not be parsed into the expected shape."""


# --- relevance ---------------------------------------------------------


class BackendUnavailable(EngineError):
    """A scoring or embedding backend could not be reached or loaded."""


class EmbeddingBackendUnavailable(BackendUnavailable):
    """The embedding backend needed by a metric is unavailable."""


class ScoreLengthMismatch(EngineError):
    """Backend returned a score list whose length differs from the input."""


# --- orchestrator ------------------------------------------------------


class NoChunks(EngineError):
    """Leaf answering was attempted on a paper that produced zero chunks."""


class TemplateSectionMissing(EngineError):
    """A full review is missing one of the required template headers."""


class RunInterrupted(EngineError):
    """The run stopped early on purpose (step limit); state is persisted."""


# --- metrics -----------------------------------------------------------


class LengthMismatch(EngineError):
    """Prediction and reference collections disagree in length."""


class EmptyInput(EngineError):
    """A metric received an empty comment list it cannot score."""


# --- bench -------------------------------------------------------------


class InsufficientCandidates(EngineError):
    """A stratum holds fewer candidates than the requested sample size."""


# --- run store ---------------------------------------------------------


class CorruptState(EngineError):
    """Persisted run state could not be loaded back."""
