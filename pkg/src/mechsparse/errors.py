"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2,
NumericalError -> 3, OSError -> 4.
"""


class ValidationError(ValueError):
    """Bad user input: shapes, non-binary entries, unknown names, config fields."""


class NumericalError(RuntimeError):
    """A numerical contract failed: singular matrix, broken invariant, divergence."""


class EliminationError(NumericalError):
    """Masked Gauss-Jordan elimination could not proceed."""


class RankDeficientError(NumericalError):
    """A regression design was rank deficient (collapsed representation)."""


class ModelSupportError(ValidationError):
    """A model's Jacobians do not respect the graph it claims to follow."""
