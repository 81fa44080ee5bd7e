"""Exception classes raised across the package."""


class ComparabilityError(ValueError):
    """Two partitions cover a different number of pixels."""


class DegenerateMetricError(ArithmeticError):
    """A chance-corrected index has a zero denominator.

    Attributes
    ----------
    code : str
        Machine-readable reason, e.g. ``"ARI_ZERO_DENOMINATOR"``.
    """

    def __init__(self, message, code="ARI_ZERO_DENOMINATOR"):
        super().__init__(message)
        self.code = code


class DegenerateRangeError(ValueError):
    """A min/max normalization range collapsed to a single value."""


class EmptyEnsembleError(ValueError):
    """An operation that needs at least one partition received none."""
