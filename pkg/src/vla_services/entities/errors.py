"""Error hierarchy shared by every layer of vla_services."""
from pathlib import Path
from typing import Any, Dict, Optional


class VlaError(Exception):
    """Root of all toolkit errors."""

    exit_code = 1


class InvalidArgumentError(VlaError, ValueError):
    """A precondition on an argument was violated."""

    exit_code = 2


class SequenceTooLongError(InvalidArgumentError):
    """A packed sequence exceeds the configured maximum length."""


class CorruptStreamError(VlaError, ValueError):
    """A token stream or binary artifact cannot be decoded."""

    exit_code = 3


class ContextOverflowError(VlaError):
    """Generation would run past the model context (budget exceeded)."""


class MalformedGenerationError(VlaError):
    """The model emitted something that is not a decodable action block."""


class TrainingDivergedError(VlaError, RuntimeError):
    """Loss became non-finite during a training stage."""

    exit_code = 4

    def __init__(self, message: str,
                 diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DataError(VlaError):
    """An input file is missing or corrupt."""

    exit_code = 3

    def __init__(self, message: str, path: Optional[Path] = None):
        if path is not None:
            message = f"{message} [{path}]"
        super().__init__(message)
        self.path = path


class ArtifactNotFoundError(DataError, FileNotFoundError):
    """A required artifact (checkpoint, codec file) does not exist."""


class ManifestMismatchError(VlaError):
    """A recorded artifact hash no longer matches the file on disk."""

    exit_code = 5


class RunLockedError(VlaError):
    """Another invocation holds the run directory lock."""

    exit_code = 6
