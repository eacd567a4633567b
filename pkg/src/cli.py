"""
Command-line interface: ingest, score, enrich, train, forecast, report and pipeline
"""
import argparse
import os
import sys
from typing import Dict, List, Optional, Sequence

from loguru import logger

from . import __description__, __version__
from .config import Config, format_period_range, write_outputs
from .dataset import (QuarterlyRecord, attach_scores, format_records, format_scores, load_fixture,
                      load_records, load_scores, write_records, write_scores)
from .errors import ConfigError, ForecastError
from .events import EventCalendar, default_calendar, enrich, load_calendar, without_intervention
from .forecast import (ForecastSeries, ScenarioCalendar, TrainedModel, TrainingConfig, build_scenario,
                       default_baseline, format_forecast, in_sample_fit, load_forecast, load_scenario, roll_forward,
                       train, write_forecast)
from .report import extrema_lines, report_outputs, write_report
from .sentiment import default_lexicon, load_lexicon, score_directory

PIPELINE_FILES = {
    'records': 'records.csv',
    'scores': 'scores.csv',
    'enriched': 'enriched.csv',
    'model': 'model.ckpt',
    'training_report': 'training_report.txt',
    'forecast': 'forecast.csv',
    'report': 'report',
}


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    logger.remove()
    level = 'DEBUG' if verbose else 'WARNING' if quiet else 'INFO'
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> | {message}")


def _require_file(path: Optional[str], what: str) -> None:
    if path is not None and not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")


def _require_dir(path: Optional[str], what: str) -> None:
    if path is not None and not os.path.isdir(path):
        raise ConfigError(f"{what} not found: {path}")


def _training_config(args: argparse.Namespace) -> TrainingConfig:
    return TrainingConfig(
        window=args.window,
        hidden=args.hidden,
        epochs=args.epochs,
        learning_rate=args.lr,
        clip=args.clip,
        seed=args.seed,
        mode=args.mode,
        validation_fraction=args.validation_fraction,
        batching=args.batching,
        stop_loss=args.stop_loss,
    )


def _check_horizon(horizon: int) -> None:
    if horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {horizon}")


def _input_records(args: argparse.Namespace) -> List[QuarterlyRecord]:
    if args.fixture and args.records:
        raise ConfigError(f"give either a records file or --fixture, not both (got {args.records} and {args.fixture})")
    if args.fixture:
        return load_fixture(args.fixture)
    if not args.records:
        raise ConfigError("give a records file or --fixture")
    return load_records(args.records, allow_gaps=args.allow_gaps)


def _calendar(path: Optional[str]) -> EventCalendar:
    return load_calendar(path) if path else default_calendar()


def _enriched(records: List[QuarterlyRecord], args: argparse.Namespace) -> List[QuarterlyRecord]:
    if args.no_intervention:
        if args.calendar:
            logger.warning(f"Ignoring calendar {args.calendar}: event intervention is off")
        return without_intervention(records)
    return enrich(records, _calendar(args.calendar))


def _scenario(path: Optional[str], records: Sequence[QuarterlyRecord]) -> ScenarioCalendar:
    baseline = default_baseline(records)
    last_observed = records[-1].period
    if path is None:
        return build_scenario(EventCalendar(), baseline, last_observed)
    return load_scenario(path, last_observed, baseline)


def ingest_summary(records: Sequence[QuarterlyRecord]) -> str:
    gaps = sum(1 for record in records if record.interpolated)
    extent = format_period_range(records[0].period, records[-1].period)
    return f"{len(records)} records, {extent}, {gaps} gaps"


def forecast_summary(series: ForecastSeries, scenario: ScenarioCalendar, scenario_path: Optional[str]) -> str:
    periods = series.periods
    lines = [f"Forecast {format_period_range(periods[0], periods[-1])} ({series.horizon} quarters)"]
    if scenario_path is None:
        lines.append(f"No scenario given: baseline sentiment {scenario.baseline_sentiment:.2f} carried forward")
    else:
        lines.append(f"Scenario {scenario_path}: {len(scenario.calendar)} event(s), "
                     f"baseline sentiment {scenario.baseline_sentiment:.2f}")
    lines.append('Combined index extrema:')
    lines += extrema_lines(series)
    return '\n'.join(lines)


def cmd_ingest(args: argparse.Namespace) -> int:
    _require_file(args.records, 'records file')
    records = _input_records(args)
    write_records(records, args.out)
    print(ingest_summary(records))
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    _require_dir(args.transcripts, 'transcripts directory')
    lexicon = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
    scores = score_directory(args.transcripts, lexicon)
    write_scores(scores, args.out)
    print(f"Scored {len(scores)} transcripts")
    return 0


def cmd_enrich(args: argparse.Namespace) -> int:
    _require_file(args.records, 'records file')
    _require_file(args.scores, 'scores file')
    records = _input_records(args)
    if args.scores:
        records = attach_scores(records, load_scores(args.scores))
    enriched = _enriched(records, args)
    write_records(enriched, args.out)
    if args.no_intervention:
        print(f"Enriched {len(enriched)} records without event intervention")
    else:
        touched = sum(1 for record in enriched if record.events)
        print(f"Enriched {len(enriched)} records, {touched} with active events")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _training_config(args)
    _require_file(args.records, 'records file')
    records = _input_records(args)
    model, _, report = train(records, config)
    report_path = args.report or f"{args.out}.report.txt"
    write_outputs({args.out: model.to_text(), report_path: report.to_text()})
    validation = '' if report.validation_loss is None else f", validation loss {report.validation_loss:.6f}"
    print(f"Trained {config.mode} model for {report.epochs_run} epochs: "
          f"loss {report.initial_loss:.6f} -> {report.final_loss:.6f}{validation}")
    return 0


def cmd_forecast(args: argparse.Namespace) -> int:
    _check_horizon(args.horizon)
    _require_file(args.model, 'checkpoint')
    _require_file(args.records, 'records file')
    _require_file(args.scenario, 'scenario file')
    model = TrainedModel.load(args.model)
    records = _input_records(args)
    scenario = _scenario(args.scenario, records)
    series = roll_forward(model, model.scaler, records, args.horizon, scenario)
    write_forecast(series, args.out)
    print(forecast_summary(series, scenario, args.scenario))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    _require_file(args.forecast, 'forecast table')
    _require_file(args.model, 'checkpoint')
    _require_file(args.records, 'records file')
    if bool(args.model) != bool(args.records):
        raise ConfigError("the in-sample fit needs both --model and --records")
    series = load_forecast(args.forecast)
    fit = None
    if args.model:
        model = TrainedModel.load(args.model)
        fit = in_sample_fit(model, model.scaler, load_records(args.records))
    paths = write_report(series, args.out, fit)
    print(f"Wrote {len(paths)} report files to {args.out}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _training_config(args)
    _check_horizon(args.horizon)
    _require_file(args.records, 'records file')
    _require_dir(args.transcripts, 'transcripts directory')
    _require_file(args.scenario, 'scenario file')
    if args.no_intervention and args.scenario:
        raise ConfigError("a scenario applies future events; it cannot be combined with --no-intervention")

    records = _input_records(args)
    outputs: Dict[str, str] = {PIPELINE_FILES['records']: format_records(records)}
    if args.transcripts:
        lexicon = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
        scores = score_directory(args.transcripts, lexicon)
        outputs[PIPELINE_FILES['scores']] = format_scores(scores)
        records = attach_scores(records, scores)
    enriched = _enriched(records, args)
    outputs[PIPELINE_FILES['enriched']] = format_records(enriched)

    model, scaler, training_report = train(enriched, config)
    outputs[PIPELINE_FILES['model']] = model.to_text()
    outputs[PIPELINE_FILES['training_report']] = training_report.to_text()

    scenario = _scenario(args.scenario, enriched)
    series = roll_forward(model, scaler, enriched, args.horizon, scenario)
    fit = in_sample_fit(model, scaler, enriched)
    outputs[PIPELINE_FILES['forecast']] = format_forecast(series)
    for filename, text in report_outputs(series, fit).items():
        outputs[os.path.join(PIPELINE_FILES['report'], filename)] = text

    write_outputs({os.path.join(args.out, relative): text for relative, text in outputs.items()})
    print(ingest_summary(records))
    if args.no_intervention:
        print('Event intervention off: effective sentiment equals the base score')
    print(forecast_summary(series, scenario, args.scenario))
    print(f"Outputs written to {os.path.abspath(args.out)}")
    return 0


def _add_records_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('records', nargs='?', help='Records table (CSV)')
    parser.add_argument('--fixture', choices=Config.FIXTURE_NAMES, help='Use an embedded records table instead')
    parser.add_argument('--allow-gaps', action='store_true', help='Interpolate missing quarters linearly')


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    defaults = Config.training_defaults()
    parser.add_argument('--window', type=int, default=defaults['window'],
                        help=f"Input window in quarters (default: {defaults['window']})")
    parser.add_argument('--hidden', type=int, default=defaults['hidden'],
                        help=f"LSTM hidden size (default: {defaults['hidden']})")
    parser.add_argument('--epochs', type=int, default=defaults['epochs'],
                        help=f"Training epochs (default: {defaults['epochs']})")
    parser.add_argument('--lr', type=float, default=defaults['learning_rate'],
                        help=f"SGD learning rate (default: {defaults['learning_rate']})")
    parser.add_argument('--clip', type=float, default=defaults['clip'],
                        help=f"Global gradient norm clip (default: {defaults['clip']})")
    parser.add_argument('--seed', type=int, default=defaults['seed'],
                        help=f"Random seed (default: {defaults['seed']})")
    parser.add_argument('--mode', choices=Config.TRAINING_MODES, default=defaults['mode'],
                        help=f"One joint model or one per series (default: {defaults['mode']})")
    parser.add_argument('--validation-fraction', type=float, default=defaults['validation_fraction'],
                        help='Chronological tail held out for validation (default: 0)')
    parser.add_argument('--batching', choices=Config.BATCHING_MODES, default=defaults['batching'],
                        help=f"Update per window or per epoch (default: {defaults['batching']})")
    parser.add_argument('--stop-loss', type=float, default=defaults['stop_loss'],
                        help='Stop once the monitored loss falls to this value')


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help='Log debug progress')
    verbosity.add_argument('--quiet', action='store_true', help='Log warnings and errors only')

    parser = argparse.ArgumentParser(description=__description__)
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest='command', required=True)

    ingest = subparsers.add_parser('ingest', parents=[common], help='Validate records and write the canonical table')
    _add_records_flags(ingest)
    ingest.add_argument('--out', required=True, help='Output records table')
    ingest.set_defaults(handler=cmd_ingest)

    score = subparsers.add_parser('score', parents=[common], help='Score YYYY-QN.txt transcripts')
    score.add_argument('transcripts', help='Directory of transcripts')
    score.add_argument('--lexicon', help='Lexicon file (default: bundled financial lexicon)')
    score.add_argument('--out', required=True, help='Output scores table')
    score.set_defaults(handler=cmd_score)

    enrich_parser = subparsers.add_parser('enrich', parents=[common], help='Apply event interventions to sentiment')
    _add_records_flags(enrich_parser)
    enrich_parser.add_argument('--calendar', help='Event calendar (default: bundled calendar)')
    enrich_parser.add_argument('--scores', help='Scores table from the score command')
    enrich_parser.add_argument('--no-intervention', action='store_true',
                               help='Use the base score as effective sentiment and drop event labels')
    enrich_parser.add_argument('--out', required=True, help='Output enriched records table')
    enrich_parser.set_defaults(handler=cmd_enrich)

    train_parser = subparsers.add_parser('train', parents=[common], help='Train the LSTM on enriched records')
    _add_records_flags(train_parser)
    _add_training_flags(train_parser)
    train_parser.add_argument('--out', required=True, help='Output checkpoint')
    train_parser.add_argument('--report', help='Training report (default: <checkpoint>.report.txt)')
    train_parser.set_defaults(handler=cmd_train)

    forecast = subparsers.add_parser('forecast', parents=[common], help='Roll a trained model forward')
    _add_records_flags(forecast)
    forecast.add_argument('--model', required=True, help='Checkpoint from the train command')
    forecast.add_argument('--horizon', type=int, default=Config.DEFAULT_HORIZON,
                          help=f"Quarters to forecast (default: {Config.DEFAULT_HORIZON})")
    forecast.add_argument('--scenario', help='Future events and baseline sentiment')
    forecast.add_argument('--out', required=True, help='Output forecast table')
    forecast.set_defaults(handler=cmd_forecast)

    report = subparsers.add_parser('report', parents=[common], help='Write plot-ready tables for a forecast')
    report.add_argument('forecast', help='Forecast table from the forecast command')
    report.add_argument('--model', help='Checkpoint for the in-sample fit table (needs --records)')
    report.add_argument('--records', help='Enriched records the checkpoint was trained on')
    report.add_argument('--out', required=True, help='Output directory')
    report.set_defaults(handler=cmd_report)

    pipeline = subparsers.add_parser('pipeline', parents=[common], help='Run every stage into one directory')
    _add_records_flags(pipeline)
    _add_training_flags(pipeline)
    pipeline.add_argument('--transcripts', help='Directory of transcripts to score')
    pipeline.add_argument('--lexicon', help='Lexicon file (default: bundled financial lexicon)')
    pipeline.add_argument('--calendar', help='Event calendar (default: bundled calendar)')
    pipeline.add_argument('--no-intervention', action='store_true',
                          help='Forecast from base sentiment without event intervention')
    pipeline.add_argument('--scenario', help='Future events and baseline sentiment')
    pipeline.add_argument('--horizon', type=int, default=Config.DEFAULT_HORIZON,
                          help=f"Quarters to forecast (default: {Config.DEFAULT_HORIZON})")
    pipeline.add_argument('--out', required=True, help='Output directory')
    pipeline.set_defaults(handler=cmd_pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except (ForecastError, OSError) as e:
        logger.error(str(e))
        return 1
