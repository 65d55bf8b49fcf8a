"""Exception hierarchy shared by the library, the CLI and the tool server."""

from pathlib import Path


class MalacopulaError(Exception):
    """Base class for every error raised deliberately by this package."""


class InvalidArgumentError(MalacopulaError, ValueError):
    """An argument violates a documented precondition."""


class DataFormatError(MalacopulaError):
    """A file on disk is missing, malformed or inconsistent with its contract."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        self.path = Path(path) if path is not None else None
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class MissingUtteranceError(DataFormatError):
    """A protocol trial references an utterance absent from the loaded corpus."""


class InternalError(MalacopulaError):
    """A recorded intermediate (e.g. a gradient tape) is inconsistent."""


class CellFailure(MalacopulaError):
    """One or more (speaker, attack, L, K) training cells failed."""

    def __init__(self, failures: dict[str, str]):
        self.failures = failures
        listed = "; ".join(f"{cell}: {reason}" for cell, reason in sorted(failures.items()))
        super().__init__(f"{len(failures)} cell(s) failed: {listed}")
