"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: validation problems exit 1, I/O problems
(plain OSError) exit 2, and computation problems exit 3.
"""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class ComputationError(RuntimeError):
    """A numeric operation cannot be carried out on the given input."""
