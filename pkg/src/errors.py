"""
Exception hierarchy for the trend forecaster
"""
from typing import Optional


class ForecastError(Exception):
    """Base class for every error raised by the forecaster"""


class DataValidationError(ForecastError):
    """Invalid input data, optionally located by row and column"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class PeriodParseError(DataValidationError):
    """Malformed or out-of-range period text"""


class CalendarError(ForecastError):
    """Invalid event calendar or unknown event name"""


class LexiconError(ForecastError):
    """Invalid sentiment lexicon file"""


class ConfigError(ForecastError):
    """Invalid training, forecast or command-line configuration"""


class ShapeError(ForecastError, ValueError):
    """Array dimensions that do not fit together"""


class TrainingError(ForecastError):
    """Training could not proceed (insufficient data, divergence)"""


class CheckpointError(ForecastError):
    """Unreadable or inconsistent model checkpoint"""
