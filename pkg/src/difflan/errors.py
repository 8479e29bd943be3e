"""Exception types shared across the package."""


class DiffLanError(Exception):
    """Base class for all package errors."""


class DomainError(DiffLanError, ValueError):
    """A state or time argument lies outside its admissible range."""


class ConfigurationError(DiffLanError, ValueError):
    """Inconsistent inputs, e.g. a drift outside the admissible ball or mismatched grids."""


class NumericError(DiffLanError, ArithmeticError):
    """A numerical guarantee was breached (positivity floor, eigensolver failure)."""


class InconsistencyError(DiffLanError, RuntimeError):
    """Internally contradictory results, e.g. nonzero scores with zero LAN norm."""
