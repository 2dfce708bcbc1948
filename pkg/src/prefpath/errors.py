"""Exception hierarchy shared by all prefpath modules.

Every error that can escape the public API derives from PrefpathError so
callers (and the CLI) can map failures to stable exit codes.
"""


class PrefpathError(Exception):
    """Base class for all prefpath errors."""


class ConfigError(PrefpathError):
    """Invalid or inconsistent configuration values."""


class EmptyDataset(PrefpathError):
    """A dataset was constructed with no comparison records."""


class InvalidRecord(PrefpathError):
    """A comparison record violates a structural invariant (left == right, negative weight)."""


class ItemIndexOutOfRange(PrefpathError):
    """A record references an item index outside the feature matrix."""


class DimensionMismatch(PrefpathError):
    """Model state dimensions do not match the dataset."""


class NonBinaryOutcomeForGLM(PrefpathError):
    """Bradley-Terry / Thurstone-Mosteller require outcomes in {+1, -1}."""


class StepSizeTooLarge(PrefpathError):
    """The step size violates the stability bound alpha*kappa*norm/m < 2."""


class NoConvergence(PrefpathError):
    """An iterative routine hit its iteration cap before reaching tolerance."""


class OutOfRange(PrefpathError):
    """A path query time lies outside the fitted path."""


class GridExceedsPath(PrefpathError):
    """A cross-validation grid point lies beyond a fitted path's final time."""


class EmptyFold(PrefpathError):
    """A cross-validation fold has no training or no held-out records."""


class EmptyTestSet(PrefpathError):
    """Evaluation was requested against zero test records."""


class ParseError(PrefpathError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class HeaderMismatch(PrefpathError):
    """A file header does not match the expected schema."""


class DuplicateFeatureRow(PrefpathError):
    """The feature file defines the same item twice."""


class HashMismatch(PrefpathError):
    """A stored artifact references a different dataset than the one supplied."""


class DisconnectedGraphWarning(UserWarning):
    """The comparison graph on items is disconnected; scores are only relative within components."""
