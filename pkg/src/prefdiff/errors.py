"""Exception types shared across the package.

Every error raised on purpose derives from PrefdiffError and carries a short
machine-readable code, which the CLI serializes to JSON on stderr.
"""


class PrefdiffError(Exception):
    code = "error"


class ShapeError(PrefdiffError):
    """Array dimensions do not match what an operation requires."""

    code = "shape"


class NonFiniteError(PrefdiffError):
    """A NaN or infinity appeared where only finite values are allowed."""

    code = "non_finite"


class ValidationError(PrefdiffError):
    """An argument or configuration value is out of its allowed range."""

    code = "validation"


class DataFormatError(PrefdiffError):
    """A dataset or checkpoint file is malformed or inconsistent."""

    code = "data_format"


class TrainingDiverged(PrefdiffError):
    """A training loop produced a non-finite or runaway loss."""

    code = "diverged"
