"""Exception hierarchy for the randomness-expansion lab.

Protocol aborts are not exceptions: a referee rejecting devices is an
expected outcome and is reported through run records. Exceptions here are
reserved for misuse, misconfiguration and violated simulation contracts.
"""


class CertirandError(Exception):
    """Base class for every error raised by this package."""


class InvalidSeedLength(CertirandError, ValueError):
    """Seed shorter than a parameter function or protocol accepts."""


class InvalidProbability(CertirandError, ValueError):
    """Probability outside the admissible range."""


class InputError(CertirandError, ValueError):
    """Malformed argument: length mismatch, unknown label, bad hex."""


class ConfigError(CertirandError):
    """Invalid constants, strategies, or an infeasible parameter chain."""

    def __init__(self, message: str, table: str = ""):
        super().__init__(message)
        self.table = table


class CapacityError(CertirandError):
    """A resource limit (qubits per register, matrix dimension) was exceeded."""


class NonSignalingViolation(CertirandError):
    """A device touched a subsystem it does not own."""


class ProtocolError(CertirandError):
    """A simulation contract was broken, e.g. a qubit measured twice."""
