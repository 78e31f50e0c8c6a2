"""Exception types shared across the package."""


class DocweaveError(Exception):
    """Base class for all docweave errors."""


class ValidationError(DocweaveError):
    """A document, entity, or schema value violates its invariants."""


class DetectionInputError(DocweaveError):
    """A detection-input file is malformed or carries invalid values."""


class TableParseError(DocweaveError):
    """Table HTML could not be parsed into a table tree."""


class EvaluationError(DocweaveError):
    """Reference or prediction files could not be read or scored."""
