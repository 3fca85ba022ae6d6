"""Exception hierarchy.

Each class maps to one CLI exit code (see ``proposa.cli``): configuration
problems exit 2, barrier violations exit 3, infrastructure faults exit 4.
"""


class ProposaError(Exception):
    exit_code = 1


class ConfigError(ProposaError):
    exit_code = 2


class DomainError(ProposaError, ValueError):
    """An argument outside the mathematical domain of an operation."""

    exit_code = 2


class InvalidArtifactError(ProposaError, ValueError):
    exit_code = 2


class ProtocolError(ProposaError):
    """Loop or ledger protocol misuse (out-of-order rounds, early finalize)."""

    exit_code = 2


class BarrierViolation(ProposaError):
    """An information barrier was crossed (test metrics leaked, double finalize)."""

    exit_code = 3


class EvaluatorFailure(ProposaError):
    exit_code = 4


class ProposerFailure(ProposaError):
    """Transport-level proposer fault: timeout, crash, non-2xx."""

    exit_code = 4


class ProposerUnavailable(ProposerFailure):
    """The proposer could not be started at all (e.g. command not found).

    Unlike a plain ProposerFailure this aborts the run instead of consuming
    an attempt.
    """


class ParseError(ProposaError, ValueError):
    """Raised by a task parser when raw text is not a valid artifact."""

    exit_code = 2

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors or [message])


class ReplayMismatch(ProposaError):
    exit_code = 1

    def __init__(self, path, expected, actual):
        super().__init__(f"replay diverged at {path}: expected {expected!r}, got {actual!r}")
        self.path = path
        self.expected = expected
        self.actual = actual


class StratificationError(DomainError):
    pass
