"""Exception hierarchy. Every error knows its CLI exit code and HTTP status."""

from typing import Any, Optional


class AqaError(Exception):
    exit_code: int = 1
    http_status: int = 500

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(AqaError):
    exit_code = 3
    http_status = 400


class MissingDependencyError(AqaError):
    exit_code = 4
    http_status = 409


class ParseError(AqaError):
    exit_code = 5
    http_status = 422

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None, row: Optional[int] = None):
        where = []
        if path:
            where.append(path)
        if offset is not None:
            where.append(f"byte offset {offset}")
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.offset = offset
        self.row = row


class BalancingError(AqaError):
    exit_code = 5
    http_status = 422


class RegistryError(AqaError):
    exit_code = 5
    http_status = 422


class PairingError(AqaError):
    exit_code = 5
    http_status = 422


class AlignmentError(AqaError):
    exit_code = 5
    http_status = 422


class CheckpointError(AqaError):
    exit_code = 6
    http_status = 500


class ConfigMismatchError(AqaError):
    exit_code = 7
    http_status = 409


class DivergenceError(AqaError):
    exit_code = 8
    http_status = 500

    def __init__(self, message: str, last_good: Any = None, history: Any = None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


class NumericError(AqaError):
    exit_code = 9
    http_status = 422


class ShapeError(NumericError):
    pass


class EmptyInputError(NumericError):
    pass


class StateError(NumericError):
    pass


class ModeError(NumericError):
    pass


class OptimizerError(NumericError):
    pass


class UndefinedCorrelationError(NumericError):
    pass


class ClipIndexError(AlignmentError, IndexError):
    pass
