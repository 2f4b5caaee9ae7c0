"""Error taxonomy shared across the package.

Argument and dimension problems raise plain ValueError.  The classes below
mark conditions that callers are expected to branch on (the CLI maps them to
distinct exit codes).
"""


class CapacityError(RuntimeError):
    """A requested computation exceeds a documented resource cap."""


class NumericRangeError(ArithmeticError):
    """A value left the representable range despite log-domain evaluation."""


class DegenerateStateError(ArithmeticError):
    """The ansatz collapsed to the zero vector (all amplitudes cancel)."""


class DegenerateSolutionError(RuntimeError):
    """An inner solve produced no usable solution (e.g. an all-zero eigenvector)."""
