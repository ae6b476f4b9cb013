"""Exception types shared across the package."""


class PtcError(Exception):
    """Base class for all package errors."""


class ConfigError(PtcError):
    """A configuration document is missing a field or holds an illegal value."""


class DomainError(PtcError):
    """An input violates a mathematical precondition (e.g. not a permutation)."""


class StateError(PtcError):
    """An object is not in the state required by the operation."""


class DegeneracyError(PtcError):
    """A numerical degeneracy (zero row/column norm) was hit."""


class InfeasibleError(PtcError):
    """No configuration can satisfy the requested constraints."""


class LegalizationError(PtcError):
    """Stochastic permutation legalization exhausted its retry budget."""

    def __init__(self, message, best_effort=None):
        super().__init__(message)
        self.best_effort = best_effort


class DivergenceError(PtcError):
    """Training produced a non-finite loss."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
