"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``smamba.cli``).
"""


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's shape rule."""


class NumericError(ArithmeticError):
    """A non-finite value was produced (NaN/Inf is never propagated silently)."""


class DataError(RuntimeError):
    """Missing, malformed or incompatible dataset / checkpoint / config files."""
