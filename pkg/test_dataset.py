"""
Tests for quarterly record loading, validation, normalization and windowing
"""
import numpy as np
import numpy.testing as npt
import pytest

from src.config import Config
from src.dataset import (TABLE2_CSV, FeatureScaler, Period, QuarterlyRecord, attach_scores, denormalize,
                         find_gaps, fit_scaler, format_records, load_fixture, load_records, load_scores,
                         make_windows, normalize, parse_period, parse_records, period_range, record_matrix,
                         write_records, write_scores)
from src.errors import DataValidationError, PeriodParseError

HEADER = ('period,net_sales,cost_of_sales,gross_profit,net_income,eps,wafer_shipment,'
          'income_from_operations,operating_expenses,sentiment_score')


def _row(period, sales=100.0, score='50'):
    return f"{period},{sales},50,50,10,0.1,1000,20,30,{score}"


def _table(*rows, header=HEADER):
    return '\n'.join([header, *rows]) + '\n'


@pytest.fixture
def fixture_records():
    return load_fixture('table2')


class TestPeriod:
    def test_parse(self):
        assert parse_period('1998 Q1') == Period(1998, 1)
        assert parse_period('2029 Q4') == Period(2029, 4)

    @pytest.mark.parametrize('text, token', [
        ('1998 Q5', 'Q5'),
        ('1998 Q0', 'Q0'),
        ('98 Q1', '98'),
        ('1998 q1', 'q1'),
    ])
    def test_bad_token_is_named(self, text, token):
        with pytest.raises(PeriodParseError, match=token):
            parse_period(text)

    def test_malformed(self):
        with pytest.raises(PeriodParseError):
            parse_period('1998Q1')

    def test_year_bounds(self):
        with pytest.raises(PeriodParseError):
            parse_period('1997 Q4')
        with pytest.raises(PeriodParseError):
            Period(2101, 1)

    def test_ordering_and_successor(self):
        assert Period(1998, 4) < Period(1999, 1)
        assert Period(1998, 4).successor() == Period(1999, 1)
        assert Period(2003, 4).shift(1) == Period(2004, 1)
        assert Period(2004, 1).shift(-1) == Period(2003, 4)
        assert str(Period(2001, 2)) == '2001 Q2'

    def test_period_range(self):
        periods = period_range(Period(2004, 1), 24)
        assert periods[0] == Period(2004, 1)
        assert periods[-1] == Period(2009, 4)
        assert len(set(periods)) == 24


class TestFixture:
    def test_extent(self, fixture_records):
        assert len(fixture_records) == 24
        assert fixture_records[0].period == Period(1998, 1)
        assert fixture_records[-1].period == Period(2003, 4)

    def test_spot_values(self, fixture_records):
        by_period = {record.period: record for record in fixture_records}
        first = by_period[Period(1998, 1)]
        assert first.net_sales == 15736.0
        assert first.eps == 1.7
        assert first.income_from_operations == 6709.0
        assert first.base_sentiment == 81.17
        assert first.events == ('0.25um Process',)
        crash = by_period[Period(2001, 2)]
        assert crash.net_income == 312.0
        assert crash.eps == 0.01
        assert by_period[Period(2003, 4)].wafer_shipment == 1427000.0

    def test_no_event_quarters_have_empty_events(self, fixture_records):
        quiet = [record for record in fixture_records if Period(2001, 4) <= record.period <= Period(2002, 3)]
        assert len(quiet) == 4
        assert all(record.events == () for record in quiet)

    def test_effective_equals_stored_score(self, fixture_records):
        assert all(record.effective_sentiment == record.base_sentiment for record in fixture_records)

    def test_round_trip_is_byte_identical(self, fixture_records, tmp_path):
        path = tmp_path / 'records.csv'
        write_records(fixture_records, str(path))
        assert path.read_text(encoding='utf-8') == TABLE2_CSV
        assert load_records(str(path)) == fixture_records

    def test_unknown_fixture(self):
        with pytest.raises(DataValidationError, match='unknown fixture'):
            load_fixture('table9')


class TestLoading:
    def test_records_are_sorted(self):
        records = parse_records(_table(_row('1998 Q2'), _row('1998 Q1')))
        assert [record.period for record in records] == [Period(1998, 1), Period(1998, 2)]

    def test_duplicate_period_names_row(self):
        with pytest.raises(DataValidationError, match=r"row 3, column 'period'"):
            parse_records(_table(_row('1998 Q1'), _row('1998 Q1')))

    def test_non_numeric_cell_names_row_and_column(self):
        with pytest.raises(DataValidationError, match=r"row 2, column 'net_sales'"):
            parse_records(_table(_row('1998 Q1', sales='n/a')))

    def test_missing_column(self):
        header = HEADER.replace(',eps', '')
        with pytest.raises(DataValidationError, match="column 'eps'"):
            parse_records(_table('1998 Q1,100,50,50,10,1000,20,30,50', header=header))

    def test_header_only(self):
        with pytest.raises(DataValidationError, match='no data rows'):
            parse_records(HEADER + '\n')

    def test_empty_file(self):
        with pytest.raises(DataValidationError, match='no data rows'):
            parse_records('')

    def test_score_out_of_range(self):
        with pytest.raises(DataValidationError, match='sentiment_score'):
            parse_records(_table(_row('1998 Q1', score='101')))

    def test_empty_score_is_absent(self):
        records = parse_records(_table(_row('1998 Q1', score='')))
        assert records[0].base_sentiment is None

    def test_negative_wafer_shipment(self):
        with pytest.raises(DataValidationError, match='wafer_shipment'):
            parse_records(_table('1998 Q1,100,50,50,10,0.1,-1,20,30,50'))

    def test_shares_outstanding_is_ignored(self):
        header = HEADER + ',shares_outstanding'
        records = parse_records(_table(_row('1998 Q1') + ',5000', _row('1998 Q2') + ',5100', header=header))
        assert len(records) == 2
        assert not hasattr(records[0], 'shares_outstanding')

    def test_gap_is_rejected_with_missing_quarter(self):
        with pytest.raises(DataValidationError, match='1998 Q2'):
            parse_records(_table(_row('1998 Q1'), _row('1998 Q3')))

    def test_gap_names_row_of_following_record(self):
        # rows arrive out of order; 1998 Q4 sits on row 2 and follows the gap
        text = _table(_row('1998 Q4'), _row('1998 Q1'), _row('1998 Q2'))
        with pytest.raises(DataValidationError, match=r"row 2, column 'period': missing quarters .*1998 Q3") as info:
            parse_records(text)
        assert info.value.row == 2

    def test_underscore_digit_separator_is_rejected(self):
        with pytest.raises(DataValidationError, match=r"row 2, column 'net_sales': non-numeric value '1_000'"):
            parse_records(_table(_row('1998 Q1', sales='1_000')))

    def test_invalid_utf8_names_byte_offset(self, tmp_path):
        path = tmp_path / 'latin.csv'
        path.write_bytes(_table(_row('1998 Q1')).encode('utf-8') + b'\xff\n')
        with pytest.raises(DataValidationError, match=r'not valid UTF-8 \(byte offset'):
            load_records(str(path))

    def test_gap_is_interpolated_when_allowed(self):
        records = parse_records(_table(_row('1998 Q1', sales=100.0, score='40'),
                                       _row('1998 Q4', sales=400.0, score='70')), allow_gaps=True)
        assert [str(record.period) for record in records] == ['1998 Q1', '1998 Q2', '1998 Q3', '1998 Q4']
        assert records[1].net_sales == pytest.approx(200.0)
        assert records[2].base_sentiment == pytest.approx(60.0)
        assert [record.interpolated for record in records] == [False, True, True, False]
        assert find_gaps(records) == []

    def test_record_validation(self):
        with pytest.raises(DataValidationError):
            QuarterlyRecord(Period(1998, 1), float('nan'), 1, 1, 1, 1, 1, 1, 1)


class TestScores:
    def test_round_trip_and_attach(self, fixture_records, tmp_path):
        path = tmp_path / 'scores.csv'
        scores = {Period(1998, 1): 12.5, Period(1998, 2): 90.0}
        write_scores(scores, str(path))
        assert load_scores(str(path)) == scores

        attached = attach_scores(fixture_records, scores)
        assert attached[0].base_sentiment == 12.5
        assert attached[1].base_sentiment == 90.0
        assert attached[2].base_sentiment == fixture_records[2].base_sentiment


class TestScaling:
    def test_scaler_bounds(self, fixture_records):
        scaler = fit_scaler(fixture_records)
        net_sales = Config.FINANCIAL_FEATURES.index('net_sales')
        assert scaler.mins[net_sales] == 11263.0
        assert scaler.maxs[net_sales] == 57780.0

    def test_eps_bounds(self, fixture_records):
        scaler = fit_scaler(fixture_records)
        eps = Config.FINANCIAL_FEATURES.index('eps')
        assert (scaler.mins[eps], scaler.maxs[eps]) == (0.01, 1.84)

    def test_normalize_single_value(self, fixture_records):
        scaler = fit_scaler(fixture_records).subset([Config.FINANCIAL_FEATURES.index('net_sales')])
        value = normalize(np.array([15736.0]), scaler)[0]
        assert value == pytest.approx((15736.0 - 11263.0) / (57780.0 - 11263.0))
        assert value == pytest.approx(0.09616, abs=1e-4)
        assert denormalize(np.array([0.0]), scaler)[0] == 11263.0

    def test_random_round_trip(self, fixture_records):
        scaler = fit_scaler(fixture_records)
        rng = np.random.default_rng(7)
        vectors = rng.uniform(-1e5, 1e5, size=(200, len(Config.MODEL_FEATURES))) * rng.uniform(
            1e-3, 1.0, size=(200, 1))
        restored = denormalize(normalize(vectors, scaler), scaler)
        assert np.all(np.abs(restored - vectors) <= 1e-9 * np.maximum(1.0, np.abs(vectors)))

    def test_normalized_range_and_inverse(self, fixture_records):
        matrix = record_matrix(fixture_records)
        scaler = fit_scaler(fixture_records)
        scaled = normalize(matrix, scaler)
        assert scaled.min() == 0.0
        assert scaled.max() == 1.0
        npt.assert_allclose(denormalize(scaled, scaler), matrix, rtol=1e-12)

    def test_degenerate_feature(self):
        matrix = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
        scaler = FeatureScaler.from_matrix(matrix)
        scaled = normalize(matrix, scaler)
        npt.assert_array_equal(scaled[:, 1], [0.5, 0.5, 0.5])
        npt.assert_array_equal(denormalize(scaled, scaler)[:, 1], [5.0, 5.0, 5.0])

    def test_values_outside_fit_range_are_not_clamped(self):
        scaler = FeatureScaler(np.array([0.0]), np.array([10.0]))
        assert normalize(np.array([20.0]), scaler)[0] == 2.0

    def test_needs_two_records(self, fixture_records):
        with pytest.raises(DataValidationError):
            fit_scaler(fixture_records[:1])


class TestWindows:
    def test_counts_and_alignment(self):
        series = np.arange(20, dtype=float).reshape(10, 2)
        windows = make_windows(series, 3)
        assert len(windows) == 7
        block, target = windows[0]
        npt.assert_array_equal(block, series[:3])
        npt.assert_array_equal(target, series[3])
        npt.assert_array_equal(windows[-1][1], series[9])

    def test_smallest_case(self):
        series = np.array([[1.0, 2.0], [3.0, 4.0]])
        windows = make_windows(series, 1)
        assert len(windows) == 1
        npt.assert_array_equal(windows[0][0], series[:1])
        npt.assert_array_equal(windows[0][1], series[1])

    def test_fixture_window_count(self, fixture_records):
        assert len(make_windows(record_matrix(fixture_records), 8)) == 16

    def test_windows_are_copies(self):
        series = np.zeros((4, 1))
        block, _ = make_windows(series, 2)[0]
        block[0, 0] = 9.0
        assert series[0, 0] == 0.0

    def test_too_short(self):
        with pytest.raises(DataValidationError):
            make_windows(np.zeros((8, 9)), 8)
        with pytest.raises(DataValidationError):
            make_windows(np.zeros((8, 9)), 0)

    def test_matrix_requires_effective_sentiment(self):
        records = parse_records(_table(_row('1998 Q1'), _row('1998 Q2')))
        with pytest.raises(DataValidationError, match='effective'):
            record_matrix(records)

    def test_format_without_effective_column(self):
        text = format_records(parse_records(_table(_row('1998 Q1'))))
        assert text.splitlines()[0] == HEADER + ',events'
