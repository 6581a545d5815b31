"""Exception hierarchy shared by all vsql modules."""


class VsqlError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VsqlError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedWindowError(DomainError):
    """Qubit window is not a contiguous run of indices."""


class ConfigurationError(VsqlError, ValueError):
    """Shapes, indices or settings are inconsistent with each other."""


class EncodingError(DomainError):
    """Classical data cannot be mapped to a quantum state."""


class ParseError(VsqlError, ValueError):
    """A binary or JSON input file is malformed."""


class TrainingError(VsqlError, RuntimeError):
    """The optimisation loop hit a non-recoverable numerical problem."""
