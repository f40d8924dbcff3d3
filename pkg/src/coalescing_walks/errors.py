"""Exception types shared across the package."""


class CapacityError(ValueError):
    """A problem is larger than the configured exact-computation cap."""


class StructuralError(ValueError):
    """A linear system is singular because the target set is unreachable."""


class EventCapExceeded(RuntimeError):
    """A simulation hit its event cap before the stop rule fired."""


class InsufficientSamples(ValueError):
    """A statistical test was called with fewer samples than it supports."""
