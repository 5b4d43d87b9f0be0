"""Exception hierarchy shared by every module."""


class SobnError(Exception):
    """Base class for all package errors."""


class StructureError(SobnError, ValueError):
    """Malformed network structure, index, or table shape."""


class CycleError(StructureError):
    """The parent relation contains a directed cycle."""


class DomainError(SobnError, ValueError):
    """Numeric argument outside the domain of an operation."""


class InconsistentEvidenceError(SobnError):
    """The evidence has zero probability under the network."""


class CapacityError(SobnError):
    """A computation would exceed its configured size guard."""


class ParseError(SobnError, ValueError):
    """Base class for document parsing failures.

    ``kind`` is a short stable identifier of the failure class, used by the
    CLI and tests to tell error kinds apart.
    """

    kind = "parse"

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class DocumentSyntaxError(ParseError):
    kind = "syntax"


class SchemaError(ParseError):
    """Missing, unknown, or wrongly typed field."""

    kind = "schema"


class DuplicateVariableError(ParseError):
    kind = "duplicate-variable"


class UnknownVariableError(ParseError):
    """A reference to a variable or state that does not exist."""

    kind = "unknown-variable"


class RowSumError(ParseError):
    kind = "row-sum"


class MissingRowError(ParseError):
    kind = "missing-row"


class InvalidValueError(ParseError):
    """Negative probability, nonpositive alpha, or non-finite number."""

    kind = "invalid-value"


class DocumentCycleError(ParseError):
    kind = "cycle"
