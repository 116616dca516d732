"""Exception hierarchy shared across the package."""


class FastGateError(Exception):
    """Base class for all errors raised by this package."""


class ConvergenceError(FastGateError):
    """A numerical solve failed to reach its target residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UnstableConfigurationError(FastGateError):
    """Trap configuration has a non-positive normal-mode eigenvalue."""


class SchemeError(FastGateError):
    """Pulse-scheme parameters violate the scheme's constraints."""


class GridCollisionError(FastGateError):
    """Two pulse groups claim the same repetition-rate grid slot."""

    def __init__(self, message, groups=None):
        super().__init__(message)
        self.groups = tuple(groups) if groups is not None else ()


class BudgetExceededError(FastGateError):
    """An enumeration or evaluation budget would be exceeded."""


class NoSolutionError(FastGateError):
    """Global search produced no usable candidate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StageError(FastGateError):
    """Pipeline stage failure carrying the stage name for exit-code mapping."""

    def __init__(self, stage, message, cause=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.cause = cause
