"""Exception and warning types raised by ctrlcal."""


class CalibrationError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CalibrationError, ValueError):
    """Input data violates a precondition of the calibration model."""


class DegenerateDesign(ValidationError):
    """All first-stage x values coincide, so the slope is not identifiable."""


class TooFewPoints(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class ParseError(ValidationError):
    """A CSV or config file could not be parsed.

    ``row`` and ``column`` are 1-based positions in the offending file
    (header is row 1) when known.
    """

    def __init__(self, message, *, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")


class InvalidLevel(CalibrationError, ValueError):
    pass


class NumericalError(CalibrationError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class ZeroSlope(NumericalError):
    """Estimated slope is (numerically) zero; X0 cannot be recovered."""


class SingularInformation(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, *, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class NonPositiveVariance(NumericalError):
    pass


class AllReplicationsFailed(NumericalError):
    pass


class NegativeVarianceEstimate(UserWarning):
    """Unknown-delta ML estimate of the Berkson variance came out negative.

    The result is still returned; downstream variance formulas stay
    evaluable because they only depend on gamma_hat.
    """
