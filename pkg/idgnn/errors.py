"""
Exception hierarchy for idgnn.

Everything raised on purpose by the package derives from IdgnnError so the CLI
can turn it into a one-line diagnostic and exit code 1.
"""
from typing import Any, Optional


class IdgnnError(Exception):
    """Base class for all idgnn errors."""


class ShapeError(IdgnnError, ValueError):
    pass


class IndexRangeError(IdgnnError, IndexError):
    pass


class GraphValidationError(IdgnnError, ValueError):
    def __init__(self, message: str, graph_index: Optional[int] = None):
        if graph_index is not None:
            message = f"graph {graph_index}: {message}"
        super().__init__(message)
        self.graph_index = graph_index


class DatasetParseError(IdgnnError, ValueError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class BatchError(IdgnnError, ValueError):
    pass


class ContractViolation(IdgnnError, RuntimeError):
    pass


class InternalError(IdgnnError, RuntimeError):
    pass


class CheckpointError(IdgnnError, ValueError):
    pass


class CurveFormatError(IdgnnError, ValueError):
    pass


class TrainingDiverged(IdgnnError, RuntimeError):
    """Raised on a non-finite loss; `record` holds everything logged so far."""

    def __init__(self, message: str, record: Any = None):
        super().__init__(message)
        self.record = record

    def __reduce__(self):
        # keep the record when raised inside a worker process
        return type(self), (str(self), self.record)
