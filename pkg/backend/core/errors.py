"""
Error types shared by every service.

Each class carries the CLI exit code it maps to, so command handlers can
raise domain errors and let main.run() translate them.
"""
from typing import Optional

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CONFIG = 4
EXIT_IO = 5


class RffError(Exception):
    exit_code = EXIT_CONFIG


class DimensionError(RffError, ValueError):
    """Tensor shapes do not line up."""
    exit_code = EXIT_FORMAT


class ParameterError(RffError, ValueError):
    exit_code = EXIT_CONFIG


class InputError(RffError, ValueError):
    exit_code = EXIT_CONFIG


class DegenerateInputError(InputError):
    pass


class ConfigError(RffError):
    exit_code = EXIT_CONFIG


class StateError(RffError, RuntimeError):
    exit_code = EXIT_CONFIG


class FormatError(RffError):
    """Malformed dataset/model container. offset is the byte position of the failure."""
    exit_code = EXIT_FORMAT

    def __init__(self, message: str, offset: Optional[int] = None, tensor: Optional[str] = None):
        self.offset = offset
        self.tensor = tensor
        details = []
        if offset is not None:
            details.append(f"offset {offset}")
        if tensor is not None:
            details.append(f"tensor '{tensor}'")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
