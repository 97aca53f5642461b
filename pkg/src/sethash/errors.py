"""Exception hierarchy shared across the package.

Every error carries a stable ``exit_code`` so the CLI can report distinct,
machine-checkable failure classes.
"""

from __future__ import annotations


class SetHashError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    code_name = "error"


class ConfigError(SetHashError):
    """Bad configuration: unknown key, unparsable value, invalid combination."""

    exit_code = 2
    code_name = "config"


class MissingFileError(SetHashError):
    """A required input file does not exist."""

    exit_code = 3
    code_name = "missing-file"


class FormatVersionError(SetHashError):
    """A binary artifact has the wrong magic or an unsupported version."""

    exit_code = 4
    code_name = "version-mismatch"


class DimensionMismatchError(SetHashError):
    """Feature dimensions or code lengths that must agree do not."""

    exit_code = 5
    code_name = "dimension-mismatch"


class DataFormatError(SetHashError):
    """Structurally invalid data: corrupt records, bad values, broken invariants."""

    exit_code = 6
    code_name = "data-format"


class DegenerateDataError(SetHashError):
    """Input too small or too uniform for the requested operation."""

    exit_code = 7
    code_name = "degenerate-data"
