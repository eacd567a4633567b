"""
Model training, recursive rollout, combined trend index and extrema detection
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from . import checkpoint
from .config import Config, atomic_write_text, format_value, read_text
from .dataset import (FeatureScaler, Period, QuarterlyRecord, denormalize, fit_scaler, make_windows,
                      normalize, parse_period, period_range, record_matrix)
from .errors import ConfigError, DataValidationError, PeriodParseError, ShapeError, TrainingError
from .events import (EventCalendar, active_events, apply_intervention, calendar_from_blocks,
                     read_blocks)
from .neural import LstmParameters, RngState, backward, forward, init_parameters, loss, sgd_step

SENTIMENT_INDEX = len(Config.FINANCIAL_FEATURES)
BASELINE_KEY = 'baseline_sentiment'
FORECAST_SENTIMENT_COLUMN = 'assumed_sentiment'
COMBINED_COLUMN = 'combined_index'
PEAK = 'peak'
TROUGH = 'trough'


@dataclass(frozen=True)
class TrainingConfig:
    window: int = Config.DEFAULT_WINDOW
    hidden: int = Config.DEFAULT_HIDDEN
    epochs: int = Config.DEFAULT_EPOCHS
    learning_rate: float = Config.DEFAULT_LEARNING_RATE
    clip: float = Config.DEFAULT_CLIP
    seed: int = Config.DEFAULT_SEED
    mode: str = Config.DEFAULT_MODE
    validation_fraction: float = Config.DEFAULT_VALIDATION_FRACTION
    batching: str = Config.DEFAULT_BATCHING
    stop_loss: Optional[float] = None

    def __post_init__(self):
        for name in ('window', 'hidden', 'epochs'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value}")
        if not self.learning_rate > 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not self.clip > 0:
            raise ConfigError(f"clip must be positive, got {self.clip}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.mode not in Config.TRAINING_MODES:
            raise ConfigError(f"mode must be one of {', '.join(Config.TRAINING_MODES)}, got '{self.mode}'")
        if not 0 <= self.validation_fraction < 0.5:
            raise ConfigError(f"validation fraction must be in [0, 0.5), got {self.validation_fraction}")
        if self.batching not in Config.BATCHING_MODES:
            raise ConfigError(f"batching must be one of {', '.join(Config.BATCHING_MODES)}, got '{self.batching}'")
        if self.stop_loss is not None and not self.stop_loss > 0:
            raise ConfigError(f"stop loss must be positive, got {self.stop_loss}")

    def to_strings(self) -> Dict[str, str]:
        return {key: '' if value is None else str(value) for key, value in asdict(self).items()}

    @classmethod
    def from_strings(cls, values: Dict[str, str]) -> 'TrainingConfig':
        try:
            return cls(
                window=int(values['window']),
                hidden=int(values['hidden']),
                epochs=int(values['epochs']),
                learning_rate=float(values['learning_rate']),
                clip=float(values['clip']),
                seed=int(values['seed']),
                mode=values['mode'],
                validation_fraction=float(values['validation_fraction']),
                batching=values['batching'],
                stop_loss=float(values['stop_loss']) if values.get('stop_loss') else None,
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"invalid training settings: {e}") from None


def model_channels(mode: str) -> Dict[str, List[int]]:
    """Feature columns seen (and predicted) by each LSTM of a mode"""
    if mode == 'multivariate':
        return {'multivariate': list(range(len(Config.MODEL_FEATURES)))}
    return {name: [k, SENTIMENT_INDEX] for k, name in enumerate(Config.FINANCIAL_FEATURES)}


@dataclass
class TrainedModel:
    """One or eight LSTMs with the scaler and settings they were trained with"""
    config: TrainingConfig
    scaler: FeatureScaler
    models: Dict[str, LstmParameters]

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def mode(self) -> str:
        return self.config.mode

    def predict_next(self, rows: np.ndarray) -> np.ndarray:
        """Next normalized 9-vector from a (window, 9) normalized block"""
        if self.mode == 'multivariate':
            return forward(self.models['multivariate'], rows)[0]
        prediction = np.zeros(len(Config.MODEL_FEATURES))
        sentiments = []
        for k, (name, columns) in enumerate(model_channels(self.mode).items()):
            output = forward(self.models[name], rows[:, columns])[0]
            prediction[k] = output[0]
            sentiments.append(output[1])
        prediction[SENTIMENT_INDEX] = float(np.mean(sentiments))
        return prediction

    def to_text(self) -> str:
        return checkpoint.format_checkpoint(self.config.to_strings(), Config.MODEL_FEATURES, self.scaler,
                                            self.models)

    def save(self, path: str) -> None:
        checkpoint.save_checkpoint(path, self.config.to_strings(), Config.MODEL_FEATURES, self.scaler, self.models)

    @classmethod
    def load(cls, path: str) -> 'TrainedModel':
        settings, features, scaler, models = checkpoint.load_checkpoint(path)
        if features != Config.MODEL_FEATURES:
            raise ConfigError(f"{path}: checkpoint features {features} do not match {Config.MODEL_FEATURES}")
        config = TrainingConfig.from_strings(settings)
        expected = model_channels(config.mode)
        if sorted(models) != sorted(expected):
            raise ConfigError(f"{path}: models {sorted(models)} do not fit mode '{config.mode}'")
        for name, columns in expected.items():
            if models[name].input_size != len(columns) or models[name].output_size != len(columns):
                raise ShapeError(f"{path}: model '{name}' has the wrong input or output size")
        return cls(config, scaler, models)


@dataclass
class TrainingReport:
    """Per-epoch training loss and the final validation loss"""
    mode: str
    losses: List[float]
    validation_loss: Optional[float]
    stopped_early: bool = False
    model_losses: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def to_text(self) -> str:
        validation = 'none' if self.validation_loss is None else format_value(self.validation_loss)
        lines = [
            f"# mode: {self.mode}",
            f"# epochs_run: {self.epochs_run}",
            f"# stopped_early: {str(self.stopped_early).lower()}",
            f"# final_training_loss: {format_value(self.final_loss)}",
            f"# validation_loss: {validation}",
            'epoch,loss',
        ]
        lines += [f"{epoch},{format_value(value)}" for epoch, value in enumerate(self.losses, start=1)]
        return '\n'.join(lines) + '\n'


@dataclass
class _FitResult:
    params: LstmParameters
    losses: List[float]
    validation_loss: Optional[float]
    stopped_early: bool


def _fit_model(name: str, columns: List[int], train_set: Tuple[np.ndarray, np.ndarray],
               validation_set: Tuple[np.ndarray, np.ndarray], config: TrainingConfig,
               rng: RngState) -> _FitResult:
    inputs, targets = train_set[0][:, :, columns], train_set[1][:, columns]
    val_inputs, val_targets = validation_set[0][:, :, columns], validation_set[1][:, columns]
    has_validation = len(val_inputs) > 0

    params = init_parameters(len(columns), config.hidden, len(columns), rng)
    losses = []
    stopped_early = False
    for epoch in range(1, config.epochs + 1):
        if config.batching == 'full':
            prediction, caches = forward(params, inputs)
            params = sgd_step(params, backward(params, caches, prediction, targets),
                              config.learning_rate, config.clip)
        else:
            for s in rng.permutation(len(inputs)):
                prediction, caches = forward(params, inputs[s])
                params = sgd_step(params, backward(params, caches, prediction, targets[s]),
                                  config.learning_rate, config.clip)

        train_loss = loss(forward(params, inputs)[0], targets)
        if not math.isfinite(train_loss):
            raise TrainingError(f"model '{name}': non-finite training loss at epoch {epoch}")
        losses.append(train_loss)
        if epoch % Config.LOG_EVERY_EPOCHS == 0:
            logger.debug(f"[{name}] epoch {epoch}/{config.epochs} loss {train_loss:.6f}")

        if config.stop_loss is not None:
            monitored = loss(forward(params, val_inputs)[0], val_targets) if has_validation else train_loss
            if monitored <= config.stop_loss:
                stopped_early = True
                logger.info(f"[{name}] reached stop loss {config.stop_loss} at epoch {epoch}")
                break

    validation_loss = loss(forward(params, val_inputs)[0], val_targets) if has_validation else None
    return _FitResult(params, losses, validation_loss, stopped_early)


def _mean_curve(curves: Sequence[List[float]]) -> List[float]:
    """Epoch-wise mean; a curve that stopped early holds its last value"""
    length = max(len(curve) for curve in curves)
    padded = np.array([curve + [curve[-1]] * (length - len(curve)) for curve in curves])
    return [float(value) for value in padded.mean(axis=0)]


def train(records: Sequence[QuarterlyRecord],
          config: TrainingConfig) -> Tuple[TrainedModel, FeatureScaler, TrainingReport]:
    """Fit the scaler on the training split, window the series and run the epochs"""
    if len(records) < config.window + 2:
        raise TrainingError(f"need at least {config.window + 2} records for window {config.window}, "
                            f"got {len(records)}")
    validation_count = int(math.floor(len(records) * config.validation_fraction))
    train_count = len(records) - validation_count
    if train_count < config.window + 1:
        raise TrainingError(f"training split of {train_count} records is too short for window {config.window}")

    scaler = fit_scaler(records[:train_count])
    series = normalize(record_matrix(records), scaler)
    windows = make_windows(series, config.window)
    inputs = np.stack([block for block, _ in windows])
    targets = np.stack([target for _, target in windows])
    split = train_count - config.window
    train_set = (inputs[:split], targets[:split])
    validation_set = (inputs[split:], targets[split:])
    logger.info(f"Training {config.mode} model on {split} windows ({len(targets) - split} held out), "
                f"window {config.window}, hidden {config.hidden}, {config.epochs} epochs, seed {config.seed}")

    channels = model_channels(config.mode)
    jobs = [(name, columns, train_set, validation_set, config, RngState(config.seed + k))
            for k, (name, columns) in enumerate(channels.items())]
    if len(jobs) == 1:
        results = [_fit_model(*jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(lambda job: _fit_model(*job), jobs))

    models = {name: result.params for name, result in zip(channels, results)}
    validation_losses = [result.validation_loss for result in results if result.validation_loss is not None]
    report = TrainingReport(
        mode=config.mode,
        losses=_mean_curve([result.losses for result in results]),
        validation_loss=float(np.mean(validation_losses)) if validation_losses else None,
        stopped_early=all(result.stopped_early for result in results),
        model_losses={name: result.losses for name, result in zip(channels, results)},
    )
    logger.info(f"Training finished after {report.epochs_run} epochs: loss {report.initial_loss:.6f} -> "
                f"{report.final_loss:.6f}")
    return TrainedModel(config, scaler, models), scaler, report


@dataclass(frozen=True)
class ScenarioCalendar:
    """Future events and the baseline sentiment they act on"""
    calendar: EventCalendar
    baseline_sentiment: float

    def __post_init__(self):
        if not math.isfinite(self.baseline_sentiment) or \
                not Config.SENTIMENT_MIN <= self.baseline_sentiment <= Config.SENTIMENT_MAX:
            raise ConfigError(f"baseline sentiment must be in [0, 100], got {self.baseline_sentiment}")

    def sentiment_at(self, period: Period) -> float:
        return apply_intervention(self.baseline_sentiment, active_events(self.calendar, period))


def default_baseline(records: Sequence[QuarterlyRecord]) -> float:
    """Mean effective sentiment of the last observed quarters"""
    recent = [record.effective_sentiment for record in records[-Config.BASELINE_QUARTERS:]]
    if not recent or any(value is None for value in recent):
        raise DataValidationError("effective sentiment missing in the last observed quarters")
    return float(np.mean(recent))


def build_scenario(calendar: EventCalendar, baseline: float, last_observed: Period) -> ScenarioCalendar:
    early = [event.name for event in calendar.events if event.start <= last_observed]
    if early:
        raise ConfigError(f"scenario events must start after {last_observed}: {', '.join(early)}")
    return ScenarioCalendar(calendar, baseline)


def load_scenario(path: str, last_observed: Period, baseline: float) -> ScenarioCalendar:
    """Scenario file: calendar blocks plus an optional baseline_sentiment block"""
    if not os.path.isfile(path):
        raise ConfigError(f"scenario file not found: {path}")
    blocks = read_blocks(read_text(path, ConfigError), label=path)
    event_blocks = []
    for line_number, block in blocks:
        if BASELINE_KEY in block:
            if len(block) != 1:
                raise ConfigError(f"{path} line {line_number}: {BASELINE_KEY} must be in a block of its own")
            try:
                baseline = float(block[BASELINE_KEY])
            except ValueError:
                raise ConfigError(f"{path} line {line_number}: non-numeric {BASELINE_KEY}") from None
        else:
            event_blocks.append((line_number, block))
    return build_scenario(calendar_from_blocks(event_blocks, label=path), baseline, last_observed)


@dataclass(eq=False)
class ForecastSeries:
    """Denormalized forecasts over a horizon with their assumed sentiment"""
    start: Period
    values: np.ndarray  # (horizon, 8)
    sentiment: np.ndarray  # (horizon,)
    combined_index: np.ndarray  # (horizon,)

    def __post_init__(self):
        horizon = len(self.values)
        if horizon < 1:
            raise ShapeError("forecast horizon must be at least 1")
        if self.values.shape != (horizon, len(Config.FINANCIAL_FEATURES)):
            raise ShapeError(f"forecast values must be ({horizon}, 8), got {self.values.shape}")
        if self.sentiment.shape != (horizon,) or self.combined_index.shape != (horizon,):
            raise ShapeError("sentiment and combined index must match the horizon")

    @property
    def horizon(self) -> int:
        return len(self.values)

    @property
    def periods(self) -> List[Period]:
        return period_range(self.start, self.horizon)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=Config.FINANCIAL_FEATURES)
        frame.insert(0, 'period', [str(period) for period in self.periods])
        frame[FORECAST_SENTIMENT_COLUMN] = self.sentiment
        frame[COMBINED_COLUMN] = self.combined_index
        return frame


def roll_forward(model: TrainedModel, scaler: FeatureScaler, history: Sequence[QuarterlyRecord], horizon: int,
                 scenario: ScenarioCalendar) -> ForecastSeries:
    """Recursive forecast; sentiment comes from the scenario, never from the model"""
    if horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {horizon}")
    if len(history) < model.window:
        raise DataValidationError(f"need {model.window} history records, got {len(history)}")
    history = list(history)[-model.window:]
    rows = normalize(record_matrix(history), scaler)
    sentiment_scaler = scaler.subset([SENTIMENT_INDEX])

    periods = period_range(history[-1].period.successor(), horizon)
    values, sentiments = [], []
    for period in periods:
        prediction = model.predict_next(rows)
        assumed = scenario.sentiment_at(period)
        row = prediction.copy()
        row[SENTIMENT_INDEX] = normalize(np.array([assumed]), sentiment_scaler)[0]
        rows = np.vstack([rows[1:], row])
        values.append(denormalize(prediction[:SENTIMENT_INDEX], scaler))
        sentiments.append(assumed)

    values = np.array(values)
    if not np.isfinite(values).all():
        raise TrainingError("forecast produced non-finite values")
    logger.info(f"Forecast {horizon} quarters from {periods[0]} to {periods[-1]}")
    return ForecastSeries(periods[0], values, np.array(sentiments), combined_index(values))


@dataclass(frozen=True)
class InSampleFit:
    """One-step-ahead fitted values over the observed quarters after the first window"""
    start: Period
    actual: np.ndarray
    fitted: np.ndarray

    def __post_init__(self):
        if self.actual.shape != self.fitted.shape or self.actual.ndim != 2:
            raise ShapeError(f"actual {self.actual.shape} and fitted {self.fitted.shape} must be equal matrices")

    @property
    def periods(self) -> List[Period]:
        return period_range(self.start, len(self.actual))

    def rmse(self) -> np.ndarray:
        """Root mean squared error per series"""
        return np.sqrt(np.mean((self.fitted - self.actual) ** 2, axis=0))


def in_sample_fit(model: TrainedModel, scaler: FeatureScaler, records: Sequence[QuarterlyRecord]) -> InSampleFit:
    """Predict every observed quarter from the actual window before it"""
    records = list(records)
    if len(records) <= model.window:
        raise DataValidationError(f"need more than {model.window} records for an in-sample fit, got {len(records)}")
    matrix = record_matrix(records)
    rows = normalize(matrix, scaler)
    fitted = [denormalize(model.predict_next(rows[i:i + model.window])[:SENTIMENT_INDEX], scaler)
              for i in range(len(records) - model.window)]
    return InSampleFit(records[model.window].period, matrix[model.window:, :SENTIMENT_INDEX], np.array(fitted))


def combined_index(series: np.ndarray) -> np.ndarray:
    """Equal-weight mean of horizon min-max normalized series (degenerate series count 0.5)"""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[0] < 1 or series.shape[1] < 1:
        raise ShapeError(f"expected a (horizon, series) matrix, got shape {series.shape}")
    return normalize(series, FeatureScaler.from_matrix(series)).mean(axis=1)


@dataclass(frozen=True)
class Extremum:
    position: int
    kind: str
    period: Optional[Period] = None


def find_extrema(index: Sequence[float], start: Optional[Period] = None) -> List[Extremum]:
    """Interior strict local maxima (peaks) and minima (troughs)"""
    values = np.asarray(index, dtype=np.float64)
    if values.ndim != 1 or len(values) < 3:
        raise ShapeError(f"need at least 3 points to find extrema, got {values.shape}")
    extrema = []
    for k in range(1, len(values) - 1):
        if values[k] > values[k - 1] and values[k] > values[k + 1]:
            kind = PEAK
        elif values[k] < values[k - 1] and values[k] < values[k + 1]:
            kind = TROUGH
        else:
            continue
        extrema.append(Extremum(k, kind, start.shift(k) if start is not None else None))
    return extrema


def format_forecast(series: ForecastSeries) -> str:
    frame = series.to_frame()
    for column in frame.columns[1:]:
        frame[column] = frame[column].map(format_value)
    return frame.to_csv(index=False, lineterminator='\n')


def write_forecast(series: ForecastSeries, path: str) -> None:
    atomic_write_text(path, format_forecast(series))


def load_forecast(path: str) -> ForecastSeries:
    """Read a forecast table back; periods must be consecutive"""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"no data rows in {path}") from None
    except UnicodeDecodeError as e:
        raise DataValidationError(f"{path} is not valid UTF-8 (byte offset {e.start})") from None
    except FileNotFoundError:
        raise DataValidationError(f"forecast table not found: {path}") from None
    columns = ['period'] + Config.FINANCIAL_FEATURES + [FORECAST_SENTIMENT_COLUMN, COMBINED_COLUMN]
    for column in columns:
        if column not in frame.columns:
            raise DataValidationError(f"missing column in {path}", row=1, column=column)
    if frame.empty:
        raise DataValidationError(f"no data rows in {path}")

    periods = []
    for offset, text in enumerate(frame['period']):
        try:
            periods.append(parse_period(text.strip()))
        except PeriodParseError as e:
            raise DataValidationError(str(e), row=offset + 2, column='period') from None
    for offset, (previous, current) in enumerate(zip(periods, periods[1:])):
        if current != previous.successor():
            raise DataValidationError(f"period {current} does not follow {previous}", row=offset + 3,
                                      column='period')

    def numbers(column: str) -> np.ndarray:
        try:
            return frame[column].astype(np.float64).to_numpy()
        except ValueError:
            raise DataValidationError(f"non-numeric value in {path}", column=column) from None

    values = np.column_stack([numbers(column) for column in Config.FINANCIAL_FEATURES])
    return ForecastSeries(periods[0], values, numbers(FORECAST_SENTIMENT_COLUMN), numbers(COMBINED_COLUMN))
