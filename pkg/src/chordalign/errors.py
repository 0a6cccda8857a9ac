"""Exception hierarchy shared by the library, the service, and the CLI.

Each branch maps to one process exit code so the CLI can translate
failures mechanically: usage mistakes exit 1, bad input data exits 2,
numerical failures exit 3.
"""


class ChordAlignError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(ChordAlignError):
    """Bad invocation: unknown option values, missing files, conflicting flags."""

    exit_code = 1


class DataError(ChordAlignError):
    """Malformed or inconsistent input data (audio, labels, checkpoints)."""

    exit_code = 2


class NumericError(ChordAlignError):
    """Numerical failure during computation (NaN loss, no feasible path)."""

    exit_code = 3


class ChordParseError(DataError):
    """A chord label string did not match the supported grammar."""

    def __init__(self, message: str, text: str = "", position: int | None = None):
        detail = message
        if text:
            detail += f" in {text!r}"
        if position is not None:
            detail += f" at position {position}"
        super().__init__(detail)
        self.text = text
        self.position = position
