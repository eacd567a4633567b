"""
Plot-ready forecast tables and trend summary
"""
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from .config import Config, format_period_range, format_value, safe_divide, write_outputs
from .dataset import FeatureScaler, normalize
from .forecast import ForecastSeries, InSampleFit, find_extrema

RISING = 'Rising'
FALLING = 'Falling'
STABLE = 'Stable'
INSUFFICIENT = 'Insufficient data'

PER_SERIES_FILE = 'per_series.csv'
COMBINED_FILE = 'combined_index.csv'
SUMMARY_FILE = 'summary.txt'
FIT_FILE = 'in_sample_fit.csv'


def _horizon_normalized(values: np.ndarray) -> np.ndarray:
    return normalize(values, FeatureScaler.from_matrix(values))


def trend_label(values) -> str:
    """Rising, Falling or Stable from the slope of the horizon-normalized series"""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 3:
        return INSUFFICIENT

    scaled = _horizon_normalized(values[:, None])[:, 0]
    slope = np.polyfit(np.arange(len(scaled)), scaled, 1)[0]

    if slope > Config.TREND_SLOPE_THRESHOLD:
        return RISING
    elif slope < -Config.TREND_SLOPE_THRESHOLD:
        return FALLING
    else:
        return STABLE


def per_series_table(series: ForecastSeries) -> pd.DataFrame:
    """Long table: one row per (series, period) with raw and normalized value"""
    scaled = _horizon_normalized(series.values)
    periods = [str(period) for period in series.periods]
    frames = []
    for k, name in enumerate(Config.FINANCIAL_FEATURES):
        frames.append(pd.DataFrame({
            'period': periods,
            'series': name,
            'value': series.values[:, k],
            'normalized': scaled[:, k],
        }))
    return pd.concat(frames, ignore_index=True)


def combined_table(series: ForecastSeries) -> pd.DataFrame:
    labels = [''] * series.horizon
    if series.horizon >= 3:
        for extremum in find_extrema(series.combined_index):
            labels[extremum.position] = extremum.kind
    return pd.DataFrame({
        'period': [str(period) for period in series.periods],
        'combined_index': series.combined_index,
        'extremum': labels,
    })


def extrema_lines(series: ForecastSeries) -> List[str]:
    """One line per peak or trough of the combined index"""
    if series.horizon < 3:
        return ['  (horizon too short for extrema)']
    extrema = find_extrema(series.combined_index, series.start)
    if not extrema:
        return ['  none']
    return [f"  {extremum.kind} {extremum.period} ({series.combined_index[extremum.position]:.4f})"
            for extremum in extrema]


def series_trends(series: ForecastSeries) -> Dict[str, str]:
    return {name: trend_label(series.values[:, k]) for k, name in enumerate(Config.FINANCIAL_FEATURES)}


def fit_table(fit: InSampleFit) -> pd.DataFrame:
    """Long table of observed against one-step fitted values"""
    periods = [str(period) for period in fit.periods]
    frames = []
    for k, name in enumerate(Config.FINANCIAL_FEATURES):
        frames.append(pd.DataFrame({
            'period': periods,
            'series': name,
            'actual': fit.actual[:, k],
            'fitted': fit.fitted[:, k],
        }))
    return pd.concat(frames, ignore_index=True)


def fit_lines(fit: InSampleFit) -> List[str]:
    periods = fit.periods
    lines = [f"In-sample one-step fit {format_period_range(periods[0], periods[-1])} ({len(periods)} quarters):"]
    for name, error in zip(Config.FINANCIAL_FEATURES, fit.rmse()):
        lines.append(f"  {name}: RMSE {error:.4f}")
    return lines


def summary_text(series: ForecastSeries, fit: Optional[InSampleFit] = None) -> str:
    periods = series.periods
    lines = [
        f"Forecast {format_period_range(periods[0], periods[-1])} ({series.horizon} quarters)",
        f"Assumed sentiment: {series.sentiment.min():.2f} to {series.sentiment.max():.2f}",
        f"Combined index trend: {trend_label(series.combined_index)}",
        '',
        'Series trends:',
    ]
    for k, (name, label) in enumerate(series_trends(series).items()):
        first, last = series.values[0, k], series.values[-1, k]
        change = safe_divide(last - first, abs(first)) * 100
        lines.append(f"  {name}: {label} ({change:+.1f}% over the horizon)")
    lines += ['', 'Combined index extrema:'] + extrema_lines(series)
    if fit is not None:
        lines += [''] + fit_lines(fit)
    return '\n'.join(lines) + '\n'


def _table_text(frame: pd.DataFrame, numeric: List[str]) -> str:
    frame = frame.copy()
    for column in numeric:
        frame[column] = frame[column].map(format_value)
    return frame.to_csv(index=False, lineterminator='\n')


def report_outputs(series: ForecastSeries, fit: Optional[InSampleFit] = None) -> Dict[str, str]:
    """File name to text for every report file; the fit table only when a fit is given"""
    outputs = {
        PER_SERIES_FILE: _table_text(per_series_table(series), ['value', 'normalized']),
        COMBINED_FILE: _table_text(combined_table(series), ['combined_index']),
        SUMMARY_FILE: summary_text(series, fit),
    }
    if fit is not None:
        outputs[FIT_FILE] = _table_text(fit_table(fit), ['actual', 'fitted'])
    return outputs


def write_report(series: ForecastSeries, out_dir: str, fit: Optional[InSampleFit] = None) -> List[str]:
    """Write every report file into out_dir, all or none"""
    outputs = {os.path.join(out_dir, filename): text for filename, text in report_outputs(series, fit).items()}
    paths = write_outputs(outputs)
    logger.info(f"Report written to {out_dir}")
    return paths
