"""Exception hierarchy.

Every error raised on purpose by this package derives from :class:`TLSuffError`
so callers (the CLI in particular) can map families of failures onto exit codes.
"""


class TLSuffError(Exception):
    """Base class for all package errors."""


class DataError(TLSuffError):
    """Input data is malformed or violates a dataset invariant."""


class DimensionMismatch(DataError, ValueError):
    pass


class DegenerateLabels(DataError):
    """Binary labels are all identical, so the likelihood has no maximizer."""


class MissingClass(DataError):
    """A source class in 0..K never occurs in the labels."""

    def __init__(self, missing):
        self.missing = list(missing)
        names = ", ".join(str(k) for k in self.missing)
        super().__init__(f"class label(s) {names} absent from source labels")


class SchemaError(DataError):
    """CSV/model/config file does not follow the expected layout."""


class CapExceeded(DataError):
    pass


class NumericalError(TLSuffError):
    """A numerical procedure failed (divergence, non-convergence, degeneracy)."""


class SeparationDiverged(NumericalError):
    """Coefficients diverge; the labels are (quasi-)completely separated."""


class NotConverged(NumericalError):
    pass


class TooFewSamples(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class DomainError(TLSuffError, ValueError):
    pass


class ConfigError(TLSuffError, ValueError):
    """Invalid experiment or run configuration; message names the field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ExperimentFailed(NumericalError):
    """Too many Monte Carlo replications failed to produce a fit."""
