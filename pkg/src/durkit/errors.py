"""Exception types shared across the toolkit."""


class DurkitError(ValueError):
    """Base class for all toolkit errors."""


class LengthMismatchError(DurkitError):
    """Paired sequences have different lengths."""


class DomainError(DurkitError):
    """A value is outside its mathematical domain (negative duration, rate <= 0, ...)."""


class DegenerateInputError(DurkitError):
    """Input is structurally valid but degenerate (empty mask, zero masked sum, ...)."""


class InfeasibleTargetError(DurkitError):
    """Target total is too small to give every masked phoneme at least one frame."""
