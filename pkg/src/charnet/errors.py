"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: InputError -> 2,
NumericError -> 3, FormatError (and subclasses) -> 4.
"""


class CharnetError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CharnetError, ValueError):
    """Invalid argument, shape, value, or missing input."""


class NumericError(CharnetError, ArithmeticError):
    """Non-finite value where a finite one is required (e.g. diverged loss)."""


class FormatError(CharnetError, ValueError):
    """Malformed file content (point cloud, annotation, checkpoint)."""


class ChecksumError(FormatError):
    """Checkpoint payload does not match its trailing CRC32."""


class VersionError(FormatError):
    """Checkpoint carries an unsupported format version."""
