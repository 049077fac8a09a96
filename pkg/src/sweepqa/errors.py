"""Exception hierarchy shared by all stages."""

from __future__ import annotations


class SweepQAError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(SweepQAError, ValueError):
    pass


class FormatError(SweepQAError):
    """A file could not be decoded. ``offset`` is a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class MalformedHeader(FormatError):
    pass


class TruncatedPayload(FormatError):
    def __init__(self, expected: int, actual: int, offset: int):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"truncated payload: expected {expected} bytes, found {actual}", offset
        )


class ParseError(SweepQAError):
    """Structured-text parse failure with a line (and column) location."""

    def __init__(self, message: str, path=None, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
            if column is not None:
                loc += f":{column}"
        super().__init__(f"{loc}: {message}" if loc else message)


class ValidationError(SweepQAError):
    pass


class CoverageError(ValidationError):
    def __init__(self, missing, what: str = "sweeps"):
        self.missing = sorted(missing)
        shown = ", ".join(f"{p}/{t}" for p, t in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"missing {len(self.missing)} {what}: {shown}{more}")


class ManifestMismatch(ValidationError):
    pass


class EmptyMatrix(SweepQAError, ValueError):
    pass


class UnsupportedFormat(SweepQAError, ValueError):
    pass
