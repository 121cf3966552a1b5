"""Numerical laboratory for a pluriclosed metric flow coupled to a (2,0)-form.

The package studies the coupled evolution on flat complex tori: pointwise
exterior algebra with Hermitian metric pairings (`forms`), spectral calculus
on the torus (`calculus`), the flow integrator (`flow`), volume and
obstruction analysis (`volume`), structural self-checks (`verify`), and the
command-line entry point (`cli`).
"""

from .errors import ConfigError, ConstraintViolationError, PositivityLostError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConstraintViolationError",
    "PositivityLostError",
    "__version__",
]
