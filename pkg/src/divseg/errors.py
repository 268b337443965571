"""Exception hierarchy shared across the package.

User-facing commands map :class:`DivSegError` subclasses to exit code 1 and
anything else to exit code 2, so raise the most specific subclass available.
"""


class DivSegError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(DivSegError, ValueError):
    """A value violates an operation's preconditions (shape, range, finiteness)."""


class ShapeError(InvalidInputError):
    """Array dimensions are incompatible with a network or operation contract."""


class ConfigurationError(DivSegError, ValueError):
    """A spec, registry entry, or configuration file is malformed."""


class MaskIOError(DivSegError, OSError):
    """An image or mask file could not be read, decoded, or written."""


class CheckpointError(DivSegError, OSError):
    """A checkpoint directory is missing, incomplete, or inconsistent."""


class TrainingError(DivSegError, RuntimeError):
    """Training hit a non-recoverable state such as a non-finite loss."""
