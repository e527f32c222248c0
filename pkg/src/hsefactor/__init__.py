"""Search-volume exposure estimation, portfolio sorts and Fama-MacBeth regressions."""

__version__ = "0.1.0"

from .errors import (DataError, DegenerateRegressorError, HseError, InsufficientDataError,
                     NumericalError, SingularDesignError, ValidationError)
from .panel import (BookEquityRecord, MonthStamp, ReturnPanel, RiskFreeSeries, formation_window,
                    months_between)

__all__ = [
    "BookEquityRecord", "DataError", "DegenerateRegressorError", "HseError",
    "InsufficientDataError", "MonthStamp", "NumericalError", "ReturnPanel", "RiskFreeSeries",
    "SingularDesignError", "ValidationError", "formation_window", "months_between",
]
