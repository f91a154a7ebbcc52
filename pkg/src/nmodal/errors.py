"""Exception types shared across the package.

File-format problems get their own classes so callers (and the CLI's exit-code
mapping) can tell a corrupted file from a merely mismatched one.
"""


class NmodalError(Exception):
    """Base class for package-specific failures."""


class FormatError(NmodalError, ValueError):
    """A serialized artifact (bundle or checkpoint) could not be decoded."""


class MagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class VersionError(FormatError):
    """The file's format version is not supported."""


class TruncationError(FormatError):
    """The file ended before the declared content was complete."""


class SchemaError(FormatError):
    """Structurally decodable but semantically inconsistent content."""


class DimMismatchError(FormatError):
    """Declared dimensions disagree with the data being written or consumed."""


class NumericError(NmodalError, ArithmeticError):
    """Training or evaluation produced a non-finite value."""
