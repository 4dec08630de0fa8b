import csv
import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from gcnet.errors import ConfigurationError, ParseError, WindowingError
from gcnet.market_data import (
    CSV_HEADER, LOOKBACK, SynthConfig, WindowSpec, align, generate_synthetic, load_csv, split, write_csv,
)


def _write(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        w.writerows(rows)


def _bars(dates, base=10.0):
    rows = []
    for k, d in enumerate(dates):
        c = base + k
        rows.append((d.isoformat(), c - 0.5, c + 1.0, c - 1.0, c, c, 1000 + k))
    return rows


def _weekdays(n, start=dt.date(2021, 1, 4)):
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


class TestLoadCsv:
    def test_identical_calendars(self, tmp_path):
        days = _weekdays(10)
        _write(tmp_path / "BBB.csv", _bars(days, 20.0))
        _write(tmp_path / "AAA.csv", _bars(days))
        snap = load_csv(tmp_path, min_bars=10)
        assert snap.tickers == ("AAA", "BBB")
        assert snap.n_days == 10
        np.testing.assert_array_equal(snap["AAA"].close, 10.0 + np.arange(10))
        assert not snap["AAA"].filled.any()

    def test_missing_interior_bar_is_forward_filled(self, tmp_path):
        days = _weekdays(30)
        _write(tmp_path / "AAA.csv", _bars(days))
        gappy = _bars(days, 50.0)
        del gappy[12]
        _write(tmp_path / "BBB.csv", gappy)
        snap = load_csv(tmp_path, min_bars=20)
        b = snap["BBB"]
        # hand-built expectation: day 12 copies day 11's close into every price field
        prev_close = 50.0 + 11
        assert b.filled[12] and b.filled.sum() == 1
        for name in ("open", "high", "low", "close"):
            assert getattr(b, name)[12] == prev_close
        assert b.volume[12] == 0.0
        assert b.close[13] == 50.0 + 13
        assert b.bar(12).date == days[12]

    def test_high_below_low_names_file_and_line(self, tmp_path):
        rows = _bars(_weekdays(5))
        d, o, h, lo, c, a, v = rows[2]
        rows[2] = (d, o, lo - 1.0, lo, c, a, v)
        _write(tmp_path / "BAD.csv", rows)
        with pytest.raises(ParseError) as err:
            load_csv(tmp_path, min_bars=1)
        assert err.value.line == 4
        assert err.value.path.endswith("BAD.csv")

    @pytest.mark.parametrize("row, message", [
        (("2021-01-04", "1", "2", "0.5", "1.5", "1.5"), "fields"),
        (("2021-13-04", "1", "2", "0.5", "1.5", "1.5", "10"), "month"),
        (("2021-01-04", "1", "2", "0.5", "1.5", "1.5", "-1"), "volume"),
        (("2021-01-04", "0", "2", "0.5", "1.5", "1.5", "1"), "positive"),
        (("2021-01-04", "1", "2", "0.5", "nan", "1.5", "1"), "finite"),
    ])
    def test_malformed_rows(self, tmp_path, row, message):
        _write(tmp_path / "X.csv", [row])
        with pytest.raises(ParseError, match=message):
            load_csv(tmp_path, min_bars=1)

    def test_wrong_header(self, tmp_path):
        (tmp_path / "X.csv").write_text("date,close\n2021-01-04,1\n")
        with pytest.raises(ParseError, match="header"):
            load_csv(tmp_path, min_bars=1)

    def test_non_increasing_dates(self, tmp_path):
        rows = _bars(_weekdays(4))
        rows[3] = (rows[1][0],) + rows[3][1:]
        _write(tmp_path / "X.csv", rows)
        with pytest.raises(ParseError, match="not after"):
            load_csv(tmp_path, min_bars=1)

    def test_short_ticker_is_excluded_and_reported(self, tmp_path):
        _write(tmp_path / "LONG.csv", _bars(_weekdays(70)))
        _write(tmp_path / "SHORT.csv", _bars(_weekdays(59)))
        snap = load_csv(tmp_path)
        assert snap.tickers == ("LONG",)
        assert [t for t, _ in snap.exclusions] == ["SHORT"]

    def test_sparse_ticker_is_excluded(self, tmp_path):
        days = _weekdays(80)
        _write(tmp_path / "FULL.csv", _bars(days))
        _write(tmp_path / "HOLEY.csv", [r for k, r in enumerate(_bars(days)) if k % 10 != 5])
        snap = load_csv(tmp_path)
        assert snap.tickers == ("FULL",)
        assert "missing 8" in snap.exclusions[0][1]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_csv(tmp_path / "nope")

    def test_alignment_is_idempotent(self, tmp_path):
        days = _weekdays(30)
        _write(tmp_path / "A.csv", _bars(days))
        _write(tmp_path / "B.csv", [r for k, r in enumerate(_bars(days)) if k != 7])
        snap = load_csv(tmp_path, min_bars=20)
        again, excluded = align(snap.series)
        assert not excluded
        for s, t in zip(snap.series, again):
            np.testing.assert_array_equal(s.dates, t.dates)
            np.testing.assert_array_equal(s.close, t.close)
            np.testing.assert_array_equal(s.volume, t.volume)
            np.testing.assert_array_equal(s.filled, t.filled)

    def test_roundtrip_through_writer(self, tmp_path):
        snap = generate_synthetic(SynthConfig(n_stocks=3, n_days=130))
        write_csv(snap, tmp_path / "out")
        back = load_csv(tmp_path / "out")
        assert back.tickers == snap.tickers
        for a, b in zip(snap.series, back.series):
            for name in ("open", "high", "low", "close", "adj_close", "volume"):
                np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


class TestSynthetic:
    def test_same_seed_is_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_stocks=4, n_days=150, seed=11)
        write_csv(generate_synthetic(cfg), tmp_path / "a")
        write_csv(generate_synthetic(cfg), tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_different_seeds_differ(self):
        a = generate_synthetic(SynthConfig(n_stocks=3, n_days=130, seed=1))
        b = generate_synthetic(SynthConfig(n_stocks=3, n_days=130, seed=2))
        assert not np.array_equal(a.closes(), b.closes())

    def test_perfect_coupling_single_group(self):
        snap = generate_synthetic(SynthConfig(n_stocks=6, n_days=200, n_groups=1, signal_strength=1.0))
        direction = np.sign(np.diff(snap.closes(), axis=1))
        assert np.all(direction == direction[0])
        np.testing.assert_array_equal(direction[0], snap.drivers[0, 1:])

    def test_no_signal_is_independent_of_driver(self):
        snap = generate_synthetic(SynthConfig(n_stocks=2, n_days=10_001, n_groups=1, signal_strength=0.5, seed=3))
        direction = np.sign(np.diff(snap.closes()[0]))
        driver = snap.drivers[0, 1:]
        table = np.array([[np.sum((direction == a) & (driver == b)) for b in (-1, 1)] for a in (-1, 1)])
        _, p, _, _ = chi2_contingency(table)
        assert p > 0.01

    def test_planted_agreement_rate(self):
        snap = generate_synthetic(SynthConfig(n_stocks=20, n_days=2000, n_groups=2, signal_strength=0.8, seed=5))
        direction = np.sign(np.diff(snap.closes(), axis=1))
        agree = direction == snap.drivers[snap.groups][:, 1:]
        assert abs(agree.mean() - 0.8) < 0.01

    def test_groups_are_contiguous_blocks(self):
        snap = generate_synthetic(SynthConfig(n_stocks=7, n_days=120, n_groups=3))
        np.testing.assert_array_equal(snap.groups, [0, 0, 0, 1, 1, 2, 2])

    def test_bars_satisfy_invariants(self):
        snap = generate_synthetic(SynthConfig(n_stocks=5, n_days=300, seed=9))
        for s in snap.series:
            assert np.all(s.low <= np.minimum(s.open, s.close))
            assert np.all(s.high >= np.maximum(s.open, s.close))
            assert np.all(s.low > 0) and np.all(s.volume >= 0)
            assert np.all(np.diff(s.close) != 0)
        assert np.all(np.is_busday(snap.calendar))

    def test_volume_leads_the_driver(self):
        snap = generate_synthetic(SynthConfig(n_stocks=10, n_days=3000, n_groups=1, seed=4))
        log_vol = np.log(np.stack([s.volume for s in snap.series]))
        tomorrow = snap.drivers[0, 1:]
        up = log_vol[:, :-1][:, tomorrow == 1].mean()
        down = log_vol[:, :-1][:, tomorrow == -1].mean()
        # shift of one noise sd (0.3) in each direction
        assert up - down == pytest.approx(0.6, abs=0.03)

    @pytest.mark.parametrize("changes", [
        {"n_stocks": 1}, {"n_days": 119}, {"n_groups": 0}, {"n_groups": 5, "n_stocks": 4},
        {"signal_strength": 0.4}, {"signal_strength": 1.01}, {"driver_autocorr": -1.5},
        {"volatility": 0.0}, {"volume_lead": -1.0},
    ])
    def test_invalid_config(self, changes):
        with pytest.raises(ConfigurationError):
            generate_synthetic(SynthConfig(**changes))


@pytest.fixture(scope="module")
def snap():
    return generate_synthetic(SynthConfig(n_stocks=2, n_days=200, n_groups=1))


class TestSplit:
    def test_counts(self, snap):
        # 100 labeled days: k = LOOKBACK .. LOOKBACK + 99, target right after
        target = LOOKBACK + 100
        win = split(snap, WindowSpec(target, 20))
        assert len(win.train) == 80 and len(win.validation) == 20
        assert win.validation[-1] == target - 1
        assert win.train_end == target - 21

    def test_date_target(self, snap):
        day = snap.calendar[150]
        assert split(snap, WindowSpec(day, 20)).target == 150
        assert split(snap, WindowSpec(str(day), 20)).target == 150

    def test_zero_validation_days(self, snap):
        with pytest.raises(ConfigurationError):
            split(snap, WindowSpec(150, 0))

    def test_first_day_has_no_history(self, snap):
        with pytest.raises(WindowingError):
            split(snap, WindowSpec(snap.calendar[0], 20))

    def test_too_little_history(self, snap):
        with pytest.raises(WindowingError):
            split(snap, WindowSpec(LOOKBACK + 59, 20))
        split(snap, WindowSpec(LOOKBACK + 60, 20))

    def test_unknown_date(self, snap):
        with pytest.raises(WindowingError):
            split(snap, WindowSpec("1999-01-01", 20))

    @settings(max_examples=60, deadline=None)
    @given(target=st.integers(LOOKBACK + 41, 199), d=st.integers(1, 60))
    def test_walk_forward_purity(self, snap, target, d):
        try:
            win = split(snap, WindowSpec(target, d))
        except WindowingError:
            assert target - LOOKBACK < d + 40
            return
        assert win.train.max() < win.validation.min() <= win.validation.max() < win.target
        assert len(win.validation) == d
        np.testing.assert_array_equal(np.concatenate([win.train, win.validation]), np.arange(LOOKBACK, target))


class TestSnapshot:
    def test_truncate(self):
        snap = generate_synthetic(SynthConfig(n_stocks=3, n_days=150))
        cut = snap.truncate(snap.calendar[99])
        assert cut.n_days == 100
        np.testing.assert_array_equal(cut.closes(), snap.closes()[:, :100])
        np.testing.assert_array_equal(cut.drivers, snap.drivers[:, :100])

    def test_day_index(self):
        snap = generate_synthetic(SynthConfig(n_stocks=2, n_days=130, n_groups=1))
        assert snap.day_index(snap.calendar[5]) == 5
        assert snap.day_index(7) == 7
        with pytest.raises(WindowingError):
            snap.day_index(130)

    def test_columns_are_read_only(self):
        snap = generate_synthetic(SynthConfig(n_stocks=2, n_days=130, n_groups=1))
        with pytest.raises(ValueError):
            snap.series[0].close[0] = 1.0
