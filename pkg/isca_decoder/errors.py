"""
Standardised error handling for the decoding pipeline.

Library code raises the typed errors below; the CLI wraps each subcommand with
`cli_command`, which turns them into a one-line message and a process exit code
instead of a traceback.
"""

import functools
import sys
from pathlib import Path

from .config import log
from .constants import EXIT_INPUT_ERROR, EXIT_INTERNAL_ERROR


class IscaError(Exception):
    """Base error for everything this package raises deliberately."""


class InputFormatError(IscaError):
    """A file does not conform to its declared text format."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class InventoryError(IscaError):
    """A unit label or index is not valid in the unit inventory."""


class LexiconError(IscaError):
    """A lexicon entry is invalid, duplicated, or a word is missing."""


class TopologyError(IscaError):
    """A state graph cannot be built or violates its invariants."""


class DimensionMismatch(IscaError):
    """Matrix, prior, or inventory dimensions disagree."""


class NoFeasiblePath(IscaError):
    """No state path of the requested length exists (alignment requested)."""


class EnumerationLimitExceeded(IscaError):
    """An exhaustive search would enumerate too many candidates."""


class ConfigError(IscaError):
    """Run configuration is invalid or references missing inputs."""


class InvariantViolation(IscaError):
    """An internal invariant failed; indicates a bug, not bad input."""


_INPUT_ERRORS = (
    InputFormatError, InventoryError, LexiconError, TopologyError,
    DimensionMismatch, NoFeasiblePath, EnumerationLimitExceeded, ConfigError,
    FileNotFoundError,
)


def cli_command(func):
    """Decorator: run a CLI subcommand and translate errors into exit codes.

    Input problems exit 1 with a message naming the offending input;
    invariant violations and unexpected exceptions exit 2.
    The wrapped function returns its own exit code on success.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> int:
        try:
            return func(*args, **kwargs)
        except InvariantViolation as exc:
            log.error("Invariant violated in %s: %s", func.__name__, exc)
            print(f"Internal error: {exc}", file=sys.stderr)
            return EXIT_INTERNAL_ERROR
        except _INPUT_ERRORS as exc:
            print(f"Error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        except Exception as exc:
            log.exception("Unexpected error in %s", func.__name__)
            print(f"Internal error: unexpected failure in {func.__name__}: {exc}", file=sys.stderr)
            return EXIT_INTERNAL_ERROR
    return wrapper
