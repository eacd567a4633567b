"""
Tests for the command-line stages and the end-to-end pipeline
"""
import math
import sys

import pandas as pd
import pytest
from loguru import logger

from src.cli import main
from src.config import Config
from src.dataset import TABLE2_CSV, Period, QuarterlyRecord, load_records, period_range, write_records

FAST = ['--epochs', '3', '--hidden', '6', '--seed', '42']


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    logger.remove()
    logger.add(sys.stderr)


@pytest.fixture
def fixture_csv(tmp_path):
    path = tmp_path / 'records.csv'
    path.write_text(TABLE2_CSV, encoding='utf-8')
    return str(path)


@pytest.fixture
def long_csv(tmp_path):
    records = []
    for t, period in enumerate(period_range(Period(1998, 1), 104)):
        values = {name: 100.0 + 10 * math.sin(0.4 * t + k) for k, name in enumerate(Config.FINANCIAL_FEATURES)}
        score = 50.0 + 10 * math.cos(0.2 * t)
        records.append(QuarterlyRecord(period=period, base_sentiment=score, effective_sentiment=score, **values))
    path = tmp_path / 'long.csv'
    write_records(records, str(path))
    return str(path)


def test_ingest_fixture(tmp_path, capsys):
    out = tmp_path / 'out.csv'
    assert main(['ingest', '--fixture', 'table2', '--out', str(out)]) == 0
    assert out.read_text(encoding='utf-8') == TABLE2_CSV
    assert capsys.readouterr().out.strip() == '24 records, 1998 Q1 … 2003 Q4, 0 gaps'


def test_ingest_duplicate_period(tmp_path, capsys):
    source = tmp_path / 'dup.csv'
    lines = TABLE2_CSV.splitlines()
    source.write_text('\n'.join(lines[:3] + [lines[2]]) + '\n', encoding='utf-8')
    out = tmp_path / 'out.csv'
    assert main(['ingest', str(source), '--out', str(out)]) == 1
    assert 'row 4' in capsys.readouterr().err
    assert not out.exists()


def test_ingest_counts_interpolated_gaps(tmp_path, capsys):
    source = tmp_path / 'gappy.csv'
    lines = TABLE2_CSV.splitlines()
    source.write_text('\n'.join(lines[:3] + lines[4:]) + '\n', encoding='utf-8')
    assert main(['ingest', str(source), '--allow-gaps', '--out', str(tmp_path / 'out.csv')]) == 0
    assert capsys.readouterr().out.strip().endswith('1 gaps')


def test_ingest_invalid_utf8(tmp_path, capsys):
    source = tmp_path / 'latin.csv'
    source.write_bytes(TABLE2_CSV.encode('utf-8').replace(b'Process', b'Proc\xffss', 1))
    out = tmp_path / 'out.csv'
    assert main(['ingest', str(source), '--out', str(out)]) == 1
    err = capsys.readouterr().err
    assert 'latin.csv is not valid UTF-8 (byte offset' in err
    assert not out.exists()


def test_records_file_and_fixture_are_exclusive(tmp_path, fixture_csv, capsys):
    out = tmp_path / 'out.csv'
    assert main(['ingest', fixture_csv, '--fixture', 'table2', '--out', str(out)]) == 1
    assert 'not both' in capsys.readouterr().err
    assert not out.exists()


def test_missing_records_file(tmp_path, capsys):
    assert main(['ingest', str(tmp_path / 'none.csv'), '--out', str(tmp_path / 'out.csv')]) == 1
    assert 'not found' in capsys.readouterr().err


def test_score(tmp_path):
    transcripts = tmp_path / 'transcripts'
    transcripts.mkdir()
    (transcripts / '2003-Q1.txt').write_text('', encoding='utf-8')
    (transcripts / '2003-Q2.txt').write_text('Record growth, strong demand.', encoding='utf-8')
    first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
    assert main(['score', str(transcripts), '--out', str(first)]) == 0
    assert main(['score', str(transcripts), '--out', str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    scores = pd.read_csv(first, dtype=str)
    assert list(scores.columns) == ['period', 'sentiment_score']
    assert scores['sentiment_score'][0] == '50.0'
    assert float(scores['sentiment_score'][1]) > 50.0


def test_score_missing_lexicon(tmp_path, capsys):
    (tmp_path / 'transcripts').mkdir()
    code = main(['score', str(tmp_path / 'transcripts'), '--lexicon', str(tmp_path / 'none.tsv'),
                 '--out', str(tmp_path / 'scores.csv')])
    assert code == 1
    assert 'lexicon' in capsys.readouterr().err


def test_score_invalid_utf8_transcript(tmp_path, capsys):
    transcripts = tmp_path / 'transcripts'
    transcripts.mkdir()
    (transcripts / '1998-Q1.txt').write_bytes(b'\xff\xfe')
    out = tmp_path / 'scores.csv'
    assert main(['score', str(transcripts), '--out', str(out)]) == 1
    assert '1998-Q1.txt is not valid UTF-8 (byte offset 0)' in capsys.readouterr().err
    assert not out.exists()


def test_enrich(tmp_path, fixture_csv):
    out = tmp_path / 'enriched.csv'
    assert main(['enrich', fixture_csv, '--out', str(out)]) == 0
    records = load_records(str(out))
    for record in records:
        if not record.events:
            assert record.effective_sentiment == record.base_sentiment
    first = records[0]
    assert first.effective_sentiment == pytest.approx(81.17 * 1.1)


def test_enrich_with_scores(tmp_path, fixture_csv):
    scores = tmp_path / 'scores.csv'
    scores.write_text('period,sentiment_score\n2002 Q1,40.0\n', encoding='utf-8')
    out = tmp_path / 'enriched.csv'
    assert main(['enrich', fixture_csv, '--scores', str(scores), '--out', str(out)]) == 0
    by_period = {record.period: record for record in load_records(str(out))}
    assert by_period[Period(2002, 1)].effective_sentiment == 40.0


def test_train_forecast_report(tmp_path, long_csv, capsys):
    model = tmp_path / 'model.ckpt'
    assert main(['train', long_csv, '--out', str(model), *FAST]) == 0
    assert model.exists()
    report_lines = (tmp_path / 'model.ckpt.report.txt').read_text(encoding='utf-8').splitlines()
    assert report_lines[-1].startswith('3,')

    forecast = tmp_path / 'forecast.csv'
    assert main(['forecast', long_csv, '--model', str(model), '--horizon', '24', '--out', str(forecast)]) == 0
    stdout = capsys.readouterr().out
    assert 'No scenario given' in stdout
    assert 'Combined index extrema:' in stdout
    table = pd.read_csv(forecast, dtype=str)
    assert table['period'].iloc[0] == '2024 Q1'
    assert table['period'].iloc[-1] == '2029 Q4'

    report_dir = tmp_path / 'report'
    assert main(['report', str(forecast), '--out', str(report_dir)]) == 0
    assert (report_dir / 'combined_index.csv').exists()
    assert (report_dir / 'per_series.csv').exists()
    assert (report_dir / 'summary.txt').read_text(encoding='utf-8').startswith('Forecast 2024 Q1')


def test_forecast_with_scenario(tmp_path, long_csv, capsys):
    model = tmp_path / 'model.ckpt'
    assert main(['train', long_csv, '--out', str(model), *FAST]) == 0
    scenario = tmp_path / 'scenario.txt'
    scenario.write_text('baseline_sentiment=55\n\nname=Downturn\npolarity=negative\nweight=0.8\n'
                        'scope=external\nstart=2025 Q1\nend=2025 Q4\n', encoding='utf-8')
    forecast = tmp_path / 'forecast.csv'
    assert main(['forecast', long_csv, '--model', str(model), '--horizon', '8', '--scenario', str(scenario),
                 '--out', str(forecast)]) == 0
    table = pd.read_csv(forecast)
    assert table['assumed_sentiment'].tolist() == [55.0] * 4 + [44.0] * 4
    assert '1 event(s)' in capsys.readouterr().out


def test_scenario_event_in_the_past(tmp_path, long_csv, capsys):
    model = tmp_path / 'model.ckpt'
    assert main(['train', long_csv, '--out', str(model), *FAST]) == 0
    scenario = tmp_path / 'scenario.txt'
    scenario.write_text('name=Old\npolarity=negative\nweight=0.8\nscope=external\nstart=2020 Q1\nend=2025 Q4\n',
                        encoding='utf-8')
    forecast = tmp_path / 'forecast.csv'
    assert main(['forecast', long_csv, '--model', str(model), '--scenario', str(scenario),
                 '--out', str(forecast)]) == 1
    assert 'Old' in capsys.readouterr().err
    assert not forecast.exists()


def test_invalid_flags_fail_before_work(tmp_path, fixture_csv, capsys):
    model = tmp_path / 'model.ckpt'
    assert main(['train', fixture_csv, '--window', '0', '--out', str(model)]) == 1
    assert 'window' in capsys.readouterr().err
    assert not model.exists()


def test_forecast_missing_checkpoint(tmp_path, fixture_csv):
    out = tmp_path / 'forecast.csv'
    assert main(['forecast', fixture_csv, '--model', str(tmp_path / 'none.ckpt'), '--out', str(out)]) == 1
    assert not out.exists()


def test_pipeline_is_deterministic(tmp_path, capsys):
    runs = []
    for name in ('first', 'second'):
        out = tmp_path / name
        assert main(['pipeline', '--fixture', 'table2', '--horizon', '12', '--out', str(out), *FAST]) == 0
        runs.append(out)
    files = ['records.csv', 'enriched.csv', 'model.ckpt', 'training_report.txt', 'forecast.csv',
             'report/per_series.csv', 'report/combined_index.csv', 'report/summary.txt',
             'report/in_sample_fit.csv']
    for relative in files:
        assert (runs[0] / relative).read_bytes() == (runs[1] / relative).read_bytes(), relative
    assert (runs[0] / 'records.csv').read_text(encoding='utf-8') == TABLE2_CSV
    assert pd.read_csv(runs[0] / 'forecast.csv', dtype=str)['period'].iloc[0] == '2004 Q1'


def test_pipeline_with_transcripts(tmp_path):
    transcripts = tmp_path / 'transcripts'
    transcripts.mkdir()
    (transcripts / '2003-Q4.txt').write_text('weak demand and a loss', encoding='utf-8')
    out = tmp_path / 'run'
    assert main(['pipeline', '--fixture', 'table2', '--transcripts', str(transcripts), '--horizon', '4',
                 '--out', str(out), *FAST]) == 0
    scores = pd.read_csv(out / 'scores.csv', dtype=str)
    assert scores['period'].tolist() == ['2003 Q4']
    assert float(scores['sentiment_score'][0]) < 50.0


def test_enrich_without_intervention(tmp_path):
    calendar = tmp_path / 'empty.txt'
    calendar.write_text('', encoding='utf-8')
    out = tmp_path / 'enriched.csv'
    assert main(['enrich', '--fixture', 'table2', '--calendar', str(calendar), '--out', str(out)]) == 1
    assert main(['enrich', '--fixture', 'table2', '--calendar', str(calendar), '--no-intervention',
                 '--out', str(out)]) == 0
    records = load_records(str(out))
    assert len(records) == 24
    for record in records:
        assert record.events == ()
        assert record.effective_sentiment == record.base_sentiment
    assert records[0].effective_sentiment == 81.17


def test_train_writes_nothing_when_report_fails(tmp_path):
    blocker = tmp_path / 'blocker'
    blocker.write_text('not a directory', encoding='utf-8')
    model = tmp_path / 'model.ckpt'
    assert main(['train', '--fixture', 'table2', '--out', str(model), '--report', str(blocker / 'r.txt'),
                 *FAST]) == 1
    assert not model.exists()
    assert sorted(path.name for path in tmp_path.iterdir()) == ['blocker']


def test_pipeline_without_intervention(tmp_path, capsys):
    out = tmp_path / 'run'
    assert main(['pipeline', '--fixture', 'table2', '--no-intervention', '--horizon', '4',
                 '--out', str(out), *FAST]) == 0
    assert 'Event intervention off' in capsys.readouterr().out
    enriched = pd.read_csv(out / 'enriched.csv', dtype=str, keep_default_na=False)
    assert (enriched['events'] == '').all()
    assert (enriched['effective_sentiment'] == enriched['sentiment_score']).all()

    fit = pd.read_csv(out / 'report' / 'in_sample_fit.csv', dtype=str)
    assert list(fit.columns) == ['period', 'series', 'actual', 'fitted']
    assert len(fit) == 16 * len(Config.FINANCIAL_FEATURES)
    assert fit['period'].iloc[0] == '2000 Q1'
    assert fit['period'].iloc[15] == '2003 Q4'
    net_sales = fit[fit['series'] == 'net_sales']
    assert float(net_sales['actual'].iloc[-1]) == 57780.0
    assert 'In-sample one-step fit 2000 Q1' in (out / 'report' / 'summary.txt').read_text(encoding='utf-8')


def test_no_intervention_rejects_scenario(tmp_path, capsys):
    scenario = tmp_path / 'scenario.txt'
    scenario.write_text('baseline_sentiment=55\n', encoding='utf-8')
    out = tmp_path / 'run'
    assert main(['pipeline', '--fixture', 'table2', '--no-intervention', '--scenario', str(scenario),
                 '--out', str(out), *FAST]) == 1
    assert 'no-intervention' in capsys.readouterr().err
    assert not out.exists()


def test_report_with_in_sample_fit(tmp_path, long_csv):
    model = tmp_path / 'model.ckpt'
    forecast = tmp_path / 'forecast.csv'
    assert main(['train', long_csv, '--out', str(model), *FAST]) == 0
    assert main(['forecast', long_csv, '--model', str(model), '--horizon', '6', '--out', str(forecast)]) == 0

    partial = tmp_path / 'partial'
    assert main(['report', str(forecast), '--model', str(model), '--out', str(partial)]) == 1
    assert not partial.exists()

    report_dir = tmp_path / 'report'
    assert main(['report', str(forecast), '--model', str(model), '--records', long_csv,
                 '--out', str(report_dir)]) == 0
    fit = pd.read_csv(report_dir / 'in_sample_fit.csv')
    assert len(fit) == (104 - Config.DEFAULT_WINDOW) * len(Config.FINANCIAL_FEATURES)
    assert fit['period'].iloc[0] == '2000 Q1'
    assert fit['fitted'].notna().all()
