"""Exception hierarchy shared by every module."""


class BarkKnotsError(Exception):
    """Base class for all package errors."""


class DomainError(BarkKnotsError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DimensionError(BarkKnotsError, ValueError):
    """Array or volume shapes are incompatible."""


class ExtractionError(BarkKnotsError):
    """Image content is unusable for feature extraction."""


class TrainingError(BarkKnotsError):
    """Optimisation hit a non-recoverable state (e.g. non-finite gradients)."""


class StateError(BarkKnotsError, RuntimeError):
    """An operation was called out of order."""


class FormatError(BarkKnotsError):
    """Malformed file content."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class ConfigError(BarkKnotsError):
    """Invalid configuration; ``problems`` lists ``(field, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.problems))
