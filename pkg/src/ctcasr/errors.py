"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: usage and configuration
problems exit 1, data and file-format problems exit 2.
"""


class CtcAsrError(Exception):
    """Base class for every error raised deliberately by this package."""


class UsageError(CtcAsrError):
    """Bad command line or bad API call (wrong flag combination, etc.)."""


class ConfigError(UsageError):
    """Unknown model/block name or invalid hyperparameter value."""


class FormatError(CtcAsrError):
    """A file on disk does not match its declared format.

    ``offset`` is a byte offset for binary formats, ``line`` a 1-based
    line number for text formats; either may be None.
    """

    def __init__(self, message, *, offset=None, line=None):
        detail = message
        if offset is not None:
            detail += f" (byte offset {offset})"
        if line is not None:
            detail += f" (line {line})"
        super().__init__(detail)
        self.offset = offset
        self.line = line


class DataError(CtcAsrError):
    """Well-formed file with unusable content (empty corpus, bad duration...)."""


class ShapeError(CtcAsrError):
    """Array arguments have incompatible shapes; message names both."""


class ContractViolation(CtcAsrError):
    """A layer broke the forward/backward contract (e.g. nondeterminism)."""


class InfeasibleTargetError(CtcAsrError):
    """CTC target admits no alignment path for the given number of frames."""
