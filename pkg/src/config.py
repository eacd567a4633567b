"""
Configuration and utility functions for the trend forecaster
"""
import errno
import os
from typing import Any, Dict, List, Tuple, Type

from .errors import DataValidationError, ForecastError


class Config:
    """Configuration settings for the application"""

    # Feature layout of one quarter (input-column order)
    FINANCIAL_FEATURES = [
        'net_sales',
        'cost_of_sales',
        'gross_profit',
        'net_income',
        'eps',
        'wafer_shipment',
        'income_from_operations',
        'operating_expenses',
    ]
    SENTIMENT_FEATURE = 'sentiment'
    MODEL_FEATURES = FINANCIAL_FEATURES + [SENTIMENT_FEATURE]

    # Columns recognised in a records table beyond the financials
    SENTIMENT_COLUMN = 'sentiment_score'
    EVENTS_COLUMN = 'events'
    EFFECTIVE_COLUMN = 'effective_sentiment'
    EVENT_SEPARATOR = ';'
    IGNORED_COLUMNS = ['shares_outstanding']

    # Period bounds
    MIN_YEAR = 1998
    MAX_YEAR = 2100

    # Sentiment scale
    SENTIMENT_MIN = 0.0
    SENTIMENT_MAX = 100.0

    # Training defaults
    DEFAULT_WINDOW = 8
    DEFAULT_HIDDEN = 32
    DEFAULT_EPOCHS = 2000
    DEFAULT_LEARNING_RATE = 0.005
    DEFAULT_CLIP = 1.0
    DEFAULT_SEED = 42
    DEFAULT_MODE = 'multivariate'
    DEFAULT_BATCHING = 'sample'
    DEFAULT_VALIDATION_FRACTION = 0.0
    TRAINING_MODES = ['multivariate', 'per-series']
    BATCHING_MODES = ['sample', 'full']
    LOG_EVERY_EPOCHS = 100

    # Forecast defaults
    DEFAULT_HORIZON = 24
    BASELINE_QUARTERS = 4
    TREND_SLOPE_THRESHOLD = 0.01

    # Bundled resources
    DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')
    LEXICON_PATH = os.path.join(DATA_DIR, 'financial_lexicon.tsv')
    CALENDAR_PATH = os.path.join(DATA_DIR, 'event_calendar.txt')
    FIXTURE_NAMES = ['table2']

    @classmethod
    def training_defaults(cls) -> Dict[str, Any]:
        """Default training settings keyed by TrainingConfig field"""
        return {
            'window': cls.DEFAULT_WINDOW,
            'hidden': cls.DEFAULT_HIDDEN,
            'epochs': cls.DEFAULT_EPOCHS,
            'learning_rate': cls.DEFAULT_LEARNING_RATE,
            'clip': cls.DEFAULT_CLIP,
            'seed': cls.DEFAULT_SEED,
            'mode': cls.DEFAULT_MODE,
            'validation_fraction': cls.DEFAULT_VALIDATION_FRACTION,
            'batching': cls.DEFAULT_BATCHING,
            'stop_loss': None,
        }


def format_value(value: float) -> str:
    """Format a float in shortest round-trip form for canonical tables"""
    return repr(float(value))


def format_period_range(first: Any, last: Any) -> str:
    """Format an inclusive period range for summaries"""
    return f"{first} … {last}"


def safe_divide(a: float, b: float, default: float = 0.0) -> float:
    """Safely divide two numbers, returning default if division by zero"""
    try:
        return a / b if b != 0 else default
    except (TypeError, ZeroDivisionError):
        return default


def write_outputs(outputs: Dict[str, str]) -> List[str]:
    """Write several files so that either all of them land or none do

    Every temporary file is written before the first rename.
    """
    staged: List[Tuple[str, str]] = []
    try:
        for path, text in outputs.items():
            if os.path.isdir(path):
                raise IsADirectoryError(errno.EISDIR, os.strerror(errno.EISDIR), path)
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            temp_path = os.path.join(directory, f".{os.path.basename(path)}.{os.getpid()}.tmp")
            staged.append((temp_path, path))
            with open(temp_path, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
        for temp_path, path in staged:
            os.replace(temp_path, path)
    finally:
        for temp_path, _ in staged:
            if os.path.exists(temp_path):
                os.remove(temp_path)
    return [path for _, path in staged]


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path through a temporary file and a rename"""
    write_outputs({path: text})


def read_text(path: str, error: Type[ForecastError] = DataValidationError) -> str:
    """Read a UTF-8 text file; undecodable bytes raise the given error naming the file"""
    try:
        with open(path, encoding='utf-8') as f:
            return f.read()
    except UnicodeDecodeError as e:
        raise error(f"{path} is not valid UTF-8 (byte offset {e.start})") from None
