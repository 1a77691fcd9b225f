"""Linear calibration under controlled (Berkson) errors in the standards.

Estimate an unknown X0 from a first stage of standards (x_i, Y_i) and a
second stage of readings Y0, when the nominal x_i are set by the
experimenter but only realised up to an error delta_i.
"""
from .controlled import Case, ControlledFit, fit_known_delta, fit_unknown_delta
from .data import CalibrationData, SufficientStats, summarize, validate
from .errors import (
    CalibrationError,
    NegativeVarianceEstimate,
    NoConvergence,
    NumericalError,
    ParseError,
    ValidationError,
)
from .inference import UncertaintyReport, VarianceFormula, confidence_interval, report
from .io import ingest
from .usual import UsualFit, fit_usual

__version__ = "0.1.0"

__all__ = [
    "CalibrationData",
    "CalibrationError",
    "Case",
    "ControlledFit",
    "NegativeVarianceEstimate",
    "NoConvergence",
    "NumericalError",
    "ParseError",
    "SufficientStats",
    "UncertaintyReport",
    "UsualFit",
    "ValidationError",
    "VarianceFormula",
    "confidence_interval",
    "fit_known_delta",
    "fit_unknown_delta",
    "fit_usual",
    "ingest",
    "report",
    "summarize",
    "validate",
]
