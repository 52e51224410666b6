"""Exception hierarchy shared by every stage of the pipeline."""


class LifespanTreeError(Exception):
    """Base class; the CLI maps these to machine-readable failures."""

    code = "error"


class SchemaError(LifespanTreeError):
    code = "schema"


class ParseError(LifespanTreeError):
    code = "parse"

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ValidationError(LifespanTreeError):
    code = "validation"

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DomainError(LifespanTreeError, ValueError):
    code = "domain"


class SingularDesignError(LifespanTreeError):
    code = "singular_design"


class InsufficientDataError(LifespanTreeError):
    code = "insufficient_data"


class DegenerateStructureError(LifespanTreeError):
    code = "degenerate_structure"


class SexModelError(LifespanTreeError):
    code = "sex_model"


class LookupFailure(LifespanTreeError, KeyError):
    code = "lookup"

    def __str__(self):
        return str(self.args[0]) if self.args else ""
