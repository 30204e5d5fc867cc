"""Exception types shared across the package."""


class KPartitionError(Exception):
    """Base class for all package errors."""


class ProtocolValidationError(KPartitionError, ValueError):
    """Raised by :func:`kpartition.core.validate_protocol`.

    ``errors`` holds ``(code, message)`` tuples where code is one of
    ``MissingRule``, ``DuplicateRule``, ``ColorGap``, ``StateClash`` or
    ``Malformed``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{code}: {msg}" for code, msg in self.errors)
        super().__init__(lines)

    @property
    def codes(self):
        return {code for code, _ in self.errors}


class BadIdentity(KPartitionError, IndexError):
    pass


class EvenP(KPartitionError, ValueError):
    pass


class UnknownCandidate(KPartitionError, KeyError):
    pass


class InvariantViolation(KPartitionError, AssertionError):
    def __init__(self, step, message):
        self.step = step
        super().__init__(f"step {step}: {message}")


class PolicyInfeasible(KPartitionError, ValueError):
    pass


class BudgetExceeded(KPartitionError, RuntimeError):
    pass


class NotBipartition(KPartitionError, ValueError):
    pass


class StateOutsideQstar(KPartitionError, ValueError):
    pass


class RegisterOverflow(KPartitionError, RuntimeError):
    """A BS register left its declared range."""
