"""Exception and warning types shared across the toolkit.

The CLI maps these onto exit codes: RecordError -> 2, DegenerateDataError -> 3,
CompatibilityError -> 4.
"""


class RecordError(ValueError):
    """An input record file is malformed or violates a data invariant."""


class DegenerateDataError(ValueError):
    """The data cannot support the requested fit (e.g. single-class labels)."""


class CompatibilityError(ValueError):
    """Model and data disagree (feature names, model kind, missing fields)."""


class ResortWarning(UserWarning):
    """Candidates arrived unsorted by score and were re-sorted by the loader."""


class SeparationWarning(UserWarning):
    """Perfectly separable data: logistic coefficients were clamped."""
