"""Residuals, variational structure, and symmetrizing coordinate flows
for second-order evolution equations written in comoving coordinates."""

__version__ = "0.1.0"

from .errors import (
    BlowUp,
    ComovingError,
    ConfigError,
    DegenerateFlow,
    NoConvergence,
    NonFinite,
    OutOfDomain,
)

__all__ = [
    "BlowUp",
    "ComovingError",
    "ConfigError",
    "DegenerateFlow",
    "NoConvergence",
    "NonFinite",
    "OutOfDomain",
    "__version__",
]
