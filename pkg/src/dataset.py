"""
Quarterly records: parsing, validation, normalization and windowing
"""
import io
import math
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .config import Config, atomic_write_text, format_value
from .errors import DataValidationError, PeriodParseError

PERIOD_PATTERN = re.compile(r'^(\S+) (\S+)$')
QUARTER_PATTERN = re.compile(r'^Q(\d)$')

# Reference quarters 1998 Q1 - 2003 Q4; the stored score serves as both
# base and effective sentiment.
TABLE2_CSV = """\
period,net_sales,cost_of_sales,gross_profit,net_income,eps,wafer_shipment,income_from_operations,operating_expenses,sentiment_score,events,effective_sentiment
1998 Q1,15736.0,7505.0,8231.0,6947.0,1.7,350500.0,6709.0,1522.0,81.17,0.25um Process,81.17
1998 Q2,11601.0,6304.0,5296.0,3753.0,0.62,276600.0,3773.0,1466.0,67.07,0.25um Process,67.07
1998 Q3,11263.0,7144.0,4119.0,2115.0,0.35,263400.0,2827.0,1292.0,67.07,0.25um Process,67.07
1998 Q4,11633.0,8010.0,3933.0,2524.0,0.42,286200.0,2893.0,1040.0,66.96,0.25um Process,66.96
1999 Q1,12501.0,6302.0,6199.0,4090.0,0.68,319600.0,4873.0,1326.0,55.34,0.18um Process,55.34
1999 Q2,17232.0,9696.0,7536.0,6022.0,0.8,422000.0,6193.0,1343.0,55.07,0.18um Process,55.07
1999 Q3,19707.0,10939.0,8768.0,6137.0,0.81,465000.0,7169.0,1599.0,55.07,0.18um Process,55.07
1999 Q4,23691.0,13797.0,9712.0,8311.0,1.08,551000.0,7681.0,2032.0,45.66,Internet Bubble;0.18um Process,45.66
2000 Q1,28278.0,15573.0,12705.0,10091.0,1.32,642000.0,10297.0,2408.0,44.75,Internet Bubble;0.18um Process,44.75
2000 Q2,31812.0,18062.0,13749.0,13349.0,1.33,697000.0,11490.0,2259.0,43.76,Internet Bubble;0.18um Process,43.76
2000 Q3,47491.0,25146.0,22345.0,20058.0,1.74,942000.0,18615.0,3730.0,43.76,Internet Bubble;0.18um Process,43.76
2000 Q4,53822.0,29066.0,24656.0,21473.0,1.84,1001000.0,21160.0,3596.0,55.43,Internet Bubble;9/11 Investigation;0.13um Process,55.43
2001 Q1,39521.0,26043.0,11089.0,8420.0,0.71,702000.0,9257.0,4221.0,55.43,Internet Bubble;9/11 Investigation;0.13um Process,55.43
2001 Q2,26298.0,21299.0,4999.0,312.0,0.01,450000.0,284.0,4714.0,51.05,Internet Bubble;9/11 Investigation;0.13um Process,51.05
2001 Q3,26940.0,20124.0,6816.0,1237.0,0.06,448000.0,1942.0,4874.0,51.05,Internet Bubble;9/11 Investigation;0.13um Process,51.05
2001 Q4,33130.0,22041.0,11089.0,4514.0,0.26,558000.0,5859.0,5230.0,53.83,,53.83
2002 Q1,35790.0,23763.0,12027.0,6588.0,0.35,599000.0,8182.0,3845.0,54.92,,54.92
2002 Q2,44182.0,27759.0,16423.0,9310.0,0.49,719000.0,11980.0,4448.0,49.49,,49.49
2002 Q3,39835.0,27000.0,12835.0,3160.0,0.16,677000.0,8300.0,4470.0,49.49,,49.49
2002 Q4,41154.0,30272.0,10682.0,2553.0,0.13,682000.0,5651.0,5031.0,60.06,SARS Outbreak;90nm Process,60.06
2003 Q1,39325.0,28939.0,10368.0,4385.0,0.23,690000.0,6195.0,4191.0,58.87,SARS Outbreak;90nm Process,58.87
2003 Q2,49922.0,31571.0,18351.0,11730.0,0.58,887000.0,13340.0,5011.0,60.64,SARS Outbreak;90nm Process,60.64
2003 Q3,54877.0,33430.0,21447.0,15169.0,0.75,992000.0,16487.0,4960.0,60.64,SARS Outbreak;90nm Process,60.64
2003 Q4,57780.0,35072.0,22707.0,16002.0,0.79,1427000.0,16625.0,6082.0,65.69,90nm Process,65.69
"""

FIXTURES = {'table2': TABLE2_CSV}


@dataclass(frozen=True, order=True)
class Period:
    """One fiscal quarter, ordered by (year, quarter)"""
    year: int
    quarter: int

    def __post_init__(self):
        if not 1 <= self.quarter <= 4:
            raise PeriodParseError(f"quarter must be 1..4, got {self.quarter}")
        if not Config.MIN_YEAR <= self.year <= Config.MAX_YEAR:
            raise PeriodParseError(
                f"year must be {Config.MIN_YEAR}..{Config.MAX_YEAR}, got {self.year}")

    @property
    def index(self) -> int:
        """Absolute quarter number, consecutive across year boundaries"""
        return self.year * 4 + self.quarter - 1

    @classmethod
    def from_index(cls, index: int) -> 'Period':
        return cls(index // 4, index % 4 + 1)

    def shift(self, quarters: int) -> 'Period':
        return Period.from_index(self.index + quarters)

    def successor(self) -> 'Period':
        return self.shift(1)

    def __str__(self) -> str:
        return f"{self.year} Q{self.quarter}"


def parse_period(text: str) -> Period:
    """Decode 'YYYY QN' into a Period"""
    match = PERIOD_PATTERN.match(text)
    if not match:
        raise PeriodParseError(f"malformed period '{text}', expected 'YYYY QN'")
    year_token, quarter_token = match.groups()
    if not re.fullmatch(r'\d{4}', year_token):
        raise PeriodParseError(f"invalid year '{year_token}' in period '{text}'")
    quarter_match = QUARTER_PATTERN.match(quarter_token)
    if not quarter_match:
        raise PeriodParseError(f"invalid quarter '{quarter_token}' in period '{text}'")
    year = int(year_token)
    quarter = int(quarter_match.group(1))
    if not 1 <= quarter <= 4:
        raise PeriodParseError(f"invalid quarter '{quarter_token}' in period '{text}'")
    if not Config.MIN_YEAR <= year <= Config.MAX_YEAR:
        raise PeriodParseError(f"year '{year_token}' outside "
                               f"{Config.MIN_YEAR}..{Config.MAX_YEAR} in period '{text}'")
    return Period(year, quarter)


def period_range(start: Period, count: int) -> List[Period]:
    """Consecutive periods beginning at start"""
    return [start.shift(k) for k in range(count)]


def _check_score(value: Optional[float], name: str, period: Period) -> None:
    if value is None:
        return
    if not math.isfinite(value) or not Config.SENTIMENT_MIN <= value <= Config.SENTIMENT_MAX:
        raise DataValidationError(f"{name} {value} outside [0, 100] at {period}", column=name)


@dataclass(frozen=True)
class QuarterlyRecord:
    """One fiscal quarter of financial metrics with its sentiment channel"""
    period: Period
    net_sales: float
    cost_of_sales: float
    gross_profit: float
    net_income: float
    eps: float
    wafer_shipment: float
    income_from_operations: float
    operating_expenses: float
    base_sentiment: Optional[float] = None
    events: Tuple[str, ...] = ()
    effective_sentiment: Optional[float] = None
    interpolated: bool = field(default=False, compare=False)

    def __post_init__(self):
        for name in Config.FINANCIAL_FEATURES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DataValidationError(f"non-finite value at {self.period}", column=name)
        if self.wafer_shipment < 0:
            raise DataValidationError(f"negative wafer shipment at {self.period}",
                                      column='wafer_shipment')
        _check_score(self.base_sentiment, Config.SENTIMENT_COLUMN, self.period)
        _check_score(self.effective_sentiment, Config.EFFECTIVE_COLUMN, self.period)

    def financials(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in Config.FINANCIAL_FEATURES], dtype=np.float64)

    def model_vector(self) -> np.ndarray:
        """8 financials followed by the effective sentiment"""
        if self.effective_sentiment is None:
            raise DataValidationError(f"effective sentiment missing at {self.period}",
                                      column=Config.EFFECTIVE_COLUMN)
        return np.append(self.financials(), self.effective_sentiment)


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Per-feature min/max bounds for the 9 model features"""
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if self.mins.shape != self.maxs.shape:
            raise DataValidationError("scaler bounds have different lengths")
        if np.any(self.mins > self.maxs):
            raise DataValidationError("scaler min exceeds max")

    @property
    def degenerate(self) -> np.ndarray:
        return self.mins == self.maxs

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> 'FeatureScaler':
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix.min(axis=0), matrix.max(axis=0))

    def subset(self, columns: Sequence[int]) -> 'FeatureScaler':
        return FeatureScaler(self.mins[list(columns)], self.maxs[list(columns)])


def record_matrix(records: Sequence[QuarterlyRecord]) -> np.ndarray:
    """N x 9 matrix of model vectors"""
    return np.vstack([record.model_vector() for record in records])


def fit_scaler(records: Sequence[QuarterlyRecord]) -> FeatureScaler:
    """Fit min/max bounds over the given records only"""
    if len(records) < 2:
        raise DataValidationError(f"need at least 2 records to fit a scaler, got {len(records)}")
    scaler = FeatureScaler.from_matrix(record_matrix(records))
    flagged = [Config.MODEL_FEATURES[i] for i in np.flatnonzero(scaler.degenerate)]
    if flagged:
        logger.warning(f"Degenerate features map to 0.5: {', '.join(flagged)}")
    return scaler


def normalize(vector: np.ndarray, scaler: FeatureScaler) -> np.ndarray:
    """Min-max scale the leading features of vector; degenerate features become 0.5"""
    values = np.asarray(vector, dtype=np.float64)
    n = values.shape[-1]
    mins, maxs = scaler.mins[:n], scaler.maxs[:n]
    degenerate = mins == maxs
    width = np.where(degenerate, 1.0, maxs - mins)
    return np.where(degenerate, 0.5, (values - mins) / width)


def denormalize(vector: np.ndarray, scaler: FeatureScaler) -> np.ndarray:
    """Inverse of normalize; degenerate features return their stored constant"""
    values = np.asarray(vector, dtype=np.float64)
    n = values.shape[-1]
    mins, maxs = scaler.mins[:n], scaler.maxs[:n]
    return np.where(mins == maxs, mins, mins + values * (maxs - mins))


def make_windows(series: np.ndarray, window: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Supervised (input block, next row) pairs in chronological order"""
    series = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise DataValidationError(f"window must be at least 1, got {window}")
    if len(series) <= window:
        raise DataValidationError(
            f"need more than {window} rows for window {window}, got {len(series)}")
    return [(series[i:i + window].copy(), series[i + window].copy())
            for i in range(len(series) - window)]


def _parse_float(text: str, row: int, column: str) -> float:
    if '_' in text:
        raise DataValidationError(f"non-numeric value '{text}'", row=row, column=column)
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(f"non-numeric value '{text}'", row=row, column=column) from None
    if not math.isfinite(value):
        raise DataValidationError(f"non-finite value '{text}'", row=row, column=column)
    return value


def _parse_optional_score(text: str, row: int, column: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    value = _parse_float(text, row, column)
    if not Config.SENTIMENT_MIN <= value <= Config.SENTIMENT_MAX:
        raise DataValidationError(f"score {value} outside [0, 100]", row=row, column=column)
    return value


def _parse_events(text: str) -> Tuple[str, ...]:
    return tuple(name.strip() for name in text.split(Config.EVENT_SEPARATOR) if name.strip())


def _read_table(source, label: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"no data rows in {label}") from None
    except pd.errors.ParserError as e:
        raise DataValidationError(f"unreadable table {label}: {e}") from None
    except UnicodeDecodeError as e:
        raise DataValidationError(f"{label} is not valid UTF-8 (byte offset {e.start})") from None
    frame.columns = [str(column).strip() for column in frame.columns]
    return frame.fillna('')


def _records_from_frame(frame: pd.DataFrame, label: str) -> Tuple[List[QuarterlyRecord], Dict[Period, int]]:
    """Parsed records sorted by period, plus the table row of each period"""
    if frame.empty:
        raise DataValidationError(f"no data rows in {label}")

    required = ['period'] + Config.FINANCIAL_FEATURES
    for column in required:
        if column not in frame.columns:
            raise DataValidationError(f"missing column in {label}", row=1, column=column)

    known = set(required) | {Config.SENTIMENT_COLUMN, Config.EVENTS_COLUMN, Config.EFFECTIVE_COLUMN}
    for column in frame.columns:
        if column.lower() in Config.IGNORED_COLUMNS:
            logger.warning(f"Ignoring column '{column}' in {label}: shares outstanding adds noise "
                           f"and is not a model feature")
        elif column not in known:
            logger.warning(f"Ignoring unrecognised column '{column}' in {label}")

    records = []
    seen: Dict[Period, int] = {}
    for offset, row in enumerate(frame.to_dict(orient='records')):
        row_number = offset + 2  # header is row 1
        try:
            period = parse_period(row['period'].strip())
        except PeriodParseError as e:
            raise DataValidationError(str(e), row=row_number, column='period') from None
        if period in seen:
            raise DataValidationError(f"duplicate period {period} (first seen at row {seen[period]})",
                                      row=row_number, column='period')
        seen[period] = row_number

        values = {name: _parse_float(row[name].strip(), row_number, name)
                  for name in Config.FINANCIAL_FEATURES}
        if values['wafer_shipment'] < 0:
            raise DataValidationError("negative wafer shipment", row=row_number, column='wafer_shipment')
        base = _parse_optional_score(row.get(Config.SENTIMENT_COLUMN, ''), row_number,
                                     Config.SENTIMENT_COLUMN)
        effective = _parse_optional_score(row.get(Config.EFFECTIVE_COLUMN, ''), row_number,
                                          Config.EFFECTIVE_COLUMN)
        events = _parse_events(row.get(Config.EVENTS_COLUMN, ''))
        records.append(QuarterlyRecord(period=period, base_sentiment=base, events=events,
                                       effective_sentiment=effective, **values))
    return sorted(records, key=lambda record: record.period), seen


def find_gaps(records: Sequence[QuarterlyRecord]) -> List[Period]:
    """Quarters missing between the first and last record"""
    gaps = []
    for previous, current in zip(records, records[1:]):
        gaps.extend(period_range(previous.period.successor(),
                                 current.period.index - previous.period.index - 1))
    return gaps


def _lerp_optional(a: Optional[float], b: Optional[float], t: float) -> Optional[float]:
    if a is None or b is None:
        return None
    return a + t * (b - a)


def _interpolate_gaps(records: List[QuarterlyRecord]) -> List[QuarterlyRecord]:
    filled = [records[0]]
    for previous, current in zip(records, records[1:]):
        missing = current.period.index - previous.period.index - 1
        for k in range(1, missing + 1):
            t = k / (missing + 1)
            values = {name: getattr(previous, name) + t * (getattr(current, name) - getattr(previous, name))
                      for name in Config.FINANCIAL_FEATURES}
            filled.append(QuarterlyRecord(
                period=previous.period.shift(k),
                base_sentiment=_lerp_optional(previous.base_sentiment, current.base_sentiment, t),
                effective_sentiment=_lerp_optional(previous.effective_sentiment,
                                                   current.effective_sentiment, t),
                interpolated=True,
                **values,
            ))
        filled.append(current)
    return filled


def _validated(records: List[QuarterlyRecord], rows: Dict[Period, int], label: str,
               allow_gaps: bool) -> List[QuarterlyRecord]:
    gaps = find_gaps(records)
    if gaps and not allow_gaps:
        missing = ', '.join(str(period) for period in gaps)
        # located at the first record after the first gap
        following = next(current for previous, current in zip(records, records[1:])
                         if current.period.index - previous.period.index > 1)
        raise DataValidationError(f"missing quarters in {label}: {missing} (use allow-gaps to interpolate)",
                                  row=rows.get(following.period), column='period')
    if gaps:
        logger.warning(f"Interpolated {len(gaps)} missing quarters in {label}")
        records = _interpolate_gaps(records)
    logger.info(f"Loaded {len(records)} records from {label} ({records[0].period} to {records[-1].period})")
    return records


def load_records(path: str, allow_gaps: bool = False) -> List[QuarterlyRecord]:
    """Load, validate and sort a records table"""
    records, rows = _records_from_frame(_read_table(path, path), path)
    return _validated(records, rows, path, allow_gaps)


def parse_records(text: str, label: str = '<text>', allow_gaps: bool = False) -> List[QuarterlyRecord]:
    records, rows = _records_from_frame(_read_table(io.StringIO(text), label), label)
    return _validated(records, rows, label, allow_gaps)


def load_fixture(name: str = 'table2') -> List[QuarterlyRecord]:
    """Embedded sample records"""
    if name not in FIXTURES:
        raise DataValidationError(f"unknown fixture '{name}', choose from {', '.join(FIXTURES)}")
    return parse_records(FIXTURES[name], label=f"<fixture {name}>")


def _optional_text(value: Optional[float]) -> str:
    return '' if value is None else format_value(value)


def format_records(records: Iterable[QuarterlyRecord]) -> str:
    """Canonical table text for records"""
    records = list(records)
    columns = ['period'] + Config.FINANCIAL_FEATURES + [Config.SENTIMENT_COLUMN, Config.EVENTS_COLUMN]
    with_effective = any(record.effective_sentiment is not None for record in records)
    if with_effective:
        columns.append(Config.EFFECTIVE_COLUMN)

    rows = []
    for record in records:
        row = {'period': str(record.period)}
        row.update({name: format_value(getattr(record, name)) for name in Config.FINANCIAL_FEATURES})
        row[Config.SENTIMENT_COLUMN] = _optional_text(record.base_sentiment)
        row[Config.EVENTS_COLUMN] = Config.EVENT_SEPARATOR.join(record.events)
        if with_effective:
            row[Config.EFFECTIVE_COLUMN] = _optional_text(record.effective_sentiment)
        rows.append(row)
    return pd.DataFrame(rows, columns=columns).to_csv(index=False, lineterminator='\n')


def write_records(records: Iterable[QuarterlyRecord], path: str) -> None:
    atomic_write_text(path, format_records(records))


def load_scores(path: str) -> Dict[Period, float]:
    """Read a period,sentiment_score table"""
    frame = _read_table(path, path)
    for column in ('period', Config.SENTIMENT_COLUMN):
        if column not in frame.columns:
            raise DataValidationError(f"missing column in {path}", row=1, column=column)
    scores = {}
    for offset, row in enumerate(frame.to_dict(orient='records')):
        row_number = offset + 2
        try:
            period = parse_period(row['period'].strip())
        except PeriodParseError as e:
            raise DataValidationError(str(e), row=row_number, column='period') from None
        if period in scores:
            raise DataValidationError(f"duplicate period {period}", row=row_number, column='period')
        score = _parse_optional_score(row[Config.SENTIMENT_COLUMN], row_number, Config.SENTIMENT_COLUMN)
        if score is None:
            raise DataValidationError("empty score", row=row_number, column=Config.SENTIMENT_COLUMN)
        scores[period] = score
    return dict(sorted(scores.items()))


def format_scores(scores: Dict[Period, float]) -> str:
    rows = [{'period': str(period), Config.SENTIMENT_COLUMN: format_value(score)}
            for period, score in sorted(scores.items())]
    return pd.DataFrame(rows, columns=['period', Config.SENTIMENT_COLUMN]).to_csv(index=False, lineterminator='\n')


def write_scores(scores: Dict[Period, float], path: str) -> None:
    atomic_write_text(path, format_scores(scores))


def attach_scores(records: Sequence[QuarterlyRecord], scores: Dict[Period, float]) -> List[QuarterlyRecord]:
    """Set base sentiment from a scores table; unmatched records keep theirs"""
    unused = set(scores) - {record.period for record in records}
    if unused:
        logger.warning(f"{len(unused)} scores have no matching record")
    return [replace(record, base_sentiment=scores[record.period]) if record.period in scores else record
            for record in records]
