"""Exception types shared across the package."""


class ComovingError(Exception):
    """Base class for all package errors."""


class NonFinite(ComovingError):
    """A derivative or kernel value came out NaN or infinite."""


class DegenerateFlow(ComovingError):
    """The coordinate map is (numerically) non-invertible at the point."""


class OutOfDomain(ComovingError):
    """Evaluation requested outside a sampled field's grid extents."""


class BlowUp(ComovingError):
    """A trajectory left the configured bounding box during integration."""


class ConfigError(ComovingError):
    """A scenario configuration failed to parse or validate."""


class NoConvergence(ComovingError):
    """An iterative solve stagnated before reaching its tolerance."""
