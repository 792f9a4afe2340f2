"""Exception types shared across the package."""


class HDMannError(Exception):
    """Base class for all package errors."""


class ValidationError(HDMannError, ValueError):
    """Input violates a documented precondition."""


class DegenerateInputError(ValidationError):
    """Zero-norm or otherwise degenerate vector passed to a similarity."""


class DegenerateAttentionError(HDMannError, ArithmeticError):
    """Sharpened scores sum to zero so attention cannot be normalized."""


class CapacityError(ValidationError):
    """Support set does not fit on the simulated crossbar."""
