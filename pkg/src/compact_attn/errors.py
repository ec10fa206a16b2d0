"""Exception hierarchy shared across the toolkit.

Two broad families matter to callers: ``ValidationError`` (bad values,
shapes, or configuration; CLI exit code 1) and ``FileFormatError``
(corrupt or unreadable binary payloads; CLI exit code 2).
"""


class CompactAttnError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CompactAttnError):
    """Invalid values, shapes, or configuration."""


class ShapeMismatch(ValidationError):
    """Array arguments disagree on dimensions."""


class OutOfRange(ValidationError):
    """Index or coordinate outside the grid."""


class NonDivisibleTile(ValidationError):
    """Tile shape does not divide the grid exactly."""


class EmptyQueryRow(ValidationError):
    """A query block has no allowed key block."""


class GroupBoundaryMismatch(ValidationError):
    """Configs being combined do not share frame-group boundaries."""


class IncompatibleGrid(ValidationError):
    """Probability map and search parameters disagree on the grid."""


class MissingDump(ValidationError):
    """A representative denoising step has no recorded probability map."""


class SingleFrame(ValidationError):
    """Temporal analysis requested on a single-frame grid."""


class ExtentTooLarge(ValidationError):
    """Planted pattern extents do not fit inside the grid."""


class SchemaViolation(ValidationError):
    """JSON document does not match the config schema."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class InvariantViolation(ValidationError):
    """Loaded value would violate a module invariant."""


class FileFormatError(CompactAttnError):
    """Corrupt or unsupported binary file."""


class BadMagic(FileFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(FileFormatError):
    """File declares a format version this build does not read."""


class UnsupportedDtype(FileFormatError):
    """File declares a dtype code this build does not read."""


class TruncatedPayload(FileFormatError):
    """Payload length does not match the declared dimensions."""
