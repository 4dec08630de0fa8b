"""Daily OHLCV ingestion, synthetic markets and walk-forward windowing.

All series inside a :class:`MarketSnapshot` share one trading calendar, so a
"day" anywhere downstream is simply an integer index into that calendar and
a "node" is an index into the (lexicographically sorted) ticker tuple.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, WindowingError

logger = logging.getLogger(__name__)

CSV_HEADER = ("date", "open", "high", "low", "close", "adj_close", "volume")
PRICE_FIELDS = ("open", "high", "low", "close", "adj_close")

# longest indicator lookback (MACD 26 + 9); first day with a full feature vector
LOOKBACK = 35
MIN_TRAIN_DAYS = 40


def as_day(value) -> np.datetime64:
    """Coerce a date, ISO string or datetime64 to ``datetime64[D]``."""
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, dt.datetime):
        value = value.date()
    return np.datetime64(value, "D")


def to_date(day: np.datetime64) -> dt.date:
    return day.astype("datetime64[D]").astype(dt.date)


@dataclass(frozen=True)
class OhlcvBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OhlcvSeries:
    """Column-oriented bars for one ticker. ``filled`` marks forward-filled days."""

    ticker: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    adj_close: np.ndarray
    volume: np.ndarray
    filled: np.ndarray = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "dates", _readonly(self.dates, "datetime64[D]"))
        for name in PRICE_FIELDS + ("volume",):
            set_(self, name, _readonly(getattr(self, name)))
        n = len(self.dates)
        filled = np.zeros(n, bool) if self.filled is None else self.filled
        set_(self, "filled", _readonly(filled, bool))
        if any(len(getattr(self, f)) != n for f in PRICE_FIELDS + ("volume", "filled")):
            raise ConfigurationError(f"{self.ticker}: column lengths differ")
        if n > 1 and not np.all(np.diff(self.dates.astype(np.int64)) > 0):
            raise ConfigurationError(f"{self.ticker}: dates must be strictly increasing")

    def __len__(self):
        return len(self.dates)

    def bar(self, i: int) -> OhlcvBar:
        return OhlcvBar(
            to_date(self.dates[i]), float(self.open[i]), float(self.high[i]),
            float(self.low[i]), float(self.close[i]), float(self.adj_close[i]),
            float(self.volume[i]),
        )

    def head(self, n: int) -> "OhlcvSeries":
        """The first ``n`` bars."""
        return OhlcvSeries(
            self.ticker, self.dates[:n], self.open[:n], self.high[:n], self.low[:n],
            self.close[:n], self.adj_close[:n], self.volume[:n], self.filled[:n],
        )

    def scaled(self, factor: float) -> "OhlcvSeries":
        """Multiply every price column by ``factor`` (volume untouched)."""
        return OhlcvSeries(
            self.ticker, self.dates, self.open * factor, self.high * factor,
            self.low * factor, self.close * factor, self.adj_close * factor,
            self.volume, self.filled,
        )


@dataclass(frozen=True, eq=False)
class MarketSnapshot:
    """Aligned, immutable view of a stock universe.

    ``groups`` and ``drivers`` are only set for synthetic markets and carry the
    planted ground truth (group id per stock, latent driver direction per
    group and day).
    """

    tickers: tuple
    series: tuple
    calendar: np.ndarray
    exclusions: tuple = ()
    groups: np.ndarray | None = None
    drivers: np.ndarray | None = None
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "calendar", _readonly(self.calendar, "datetime64[D]"))
        if list(self.tickers) != [s.ticker for s in self.series]:
            raise ConfigurationError("tickers and series disagree")
        for s in self.series:
            if len(s) != len(self.calendar) or not np.array_equal(s.dates, self.calendar):
                raise ConfigurationError(f"{s.ticker}: series not aligned to calendar")
        index = {int(d.astype(np.int64)): i for i, d in enumerate(self.calendar)}
        object.__setattr__(self, "_index", index)

    @property
    def m(self) -> int:
        return len(self.tickers)

    @property
    def n_days(self) -> int:
        return len(self.calendar)

    def __getitem__(self, ticker: str) -> OhlcvSeries:
        return self.series[self.tickers.index(ticker)]

    def day_index(self, day) -> int:
        if isinstance(day, (int, np.integer)):
            if not 0 <= day < self.n_days:
                raise WindowingError(f"day index {day} outside calendar")
            return int(day)
        key = int(as_day(day).astype(np.int64))
        try:
            return self._index[key]
        except KeyError:
            raise WindowingError(f"{as_day(day)} is not a trading day of this snapshot") from None

    def closes(self) -> np.ndarray:
        """(m, n_days) matrix of closing prices."""
        return np.stack([s.close for s in self.series])

    def truncate(self, day) -> "MarketSnapshot":
        """Drop every bar dated after ``day``."""
        n = self.day_index(day) + 1
        drivers = None if self.drivers is None else self.drivers[:, :n]
        return MarketSnapshot(
            self.tickers, [s.head(n) for s in self.series], self.calendar[:n],
            self.exclusions, self.groups, drivers,
        )


# --------------------------------------------------------------------------
# CSV ingestion


def _parse_file(path: Path) -> OhlcvSeries:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(CSV_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(path, line, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                o, h, lo, c, adj, v = (float(x) for x in row[1:])
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            values = np.array([o, h, lo, c, adj, v])
            if not np.all(np.isfinite(values)):
                raise ParseError(path, line, "non-finite value")
            if min(o, h, lo, c, adj) <= 0:
                raise ParseError(path, line, "prices must be positive")
            if v < 0:
                raise ParseError(path, line, "negative volume")
            if lo > min(o, c) or h < max(o, c) or h < lo:
                raise ParseError(path, line, "bar violates low <= open,close <= high")
            if rows and day <= rows[-1][0]:
                raise ParseError(path, line, f"date {day} not after {rows[-1][0]}")
            rows.append((day, o, h, lo, c, adj, v))
    if not rows:
        raise ParseError(path, 2, "no data rows")
    cols = list(zip(*rows))
    return OhlcvSeries(path.stem, np.array(cols[0], "datetime64[D]"), *cols[1:])


def _shared_calendar(series) -> np.ndarray:
    start = max(s.dates[0] for s in series)
    end = min(s.dates[-1] for s in series)
    days = np.unique(np.concatenate([s.dates for s in series]))
    return days[(days >= start) & (days <= end)]


def _fill(s: OhlcvSeries, calendar: np.ndarray) -> OhlcvSeries:
    # position of the latest own bar at or before each calendar day
    pos = np.searchsorted(s.dates, calendar, side="right") - 1
    present = s.dates[pos] == calendar
    prev_close = s.close[pos]
    cols = {}
    for name in ("open", "high", "low", "close"):
        cols[name] = np.where(present, getattr(s, name)[pos], prev_close)
    cols["adj_close"] = s.adj_close[pos]
    cols["volume"] = np.where(present, s.volume[pos], 0.0)
    filled = np.where(present, s.filled[pos], True)
    return OhlcvSeries(s.ticker, calendar, filled=filled, **cols)


def align(series, max_missing_frac: float = 0.05, min_bars: int = 0):
    """Align series onto a shared calendar.

    The calendar is the union of trading dates inside the span every ticker
    covers. Missing interior bars are forward-filled from the previous close
    (volume 0, flagged). Tickers with fewer than ``min_bars`` bars or missing
    more than ``max_missing_frac`` of the calendar are excluded.

    Returns ``(aligned_series, exclusions)`` with ``exclusions`` a list of
    ``(ticker, reason)``.
    """
    exclusions = []
    keep = []
    for s in series:
        if len(s) < min_bars:
            exclusions.append((s.ticker, f"only {len(s)} bars (< {min_bars})"))
        else:
            keep.append(s)
    while keep:
        calendar = _shared_calendar(keep)
        dropped = []
        for s in keep:
            missing = len(calendar) - np.isin(calendar, s.dates).sum()
            if missing > max_missing_frac * len(calendar):
                dropped.append(s)
                exclusions.append(
                    (s.ticker, f"missing {missing} of {len(calendar)} calendar days")
                )
        if not dropped:
            return [_fill(s, calendar) for s in keep], exclusions
        keep = [s for s in keep if s not in dropped]
    return [], exclusions


def load_csv(path, min_bars: int = 60, max_missing_frac: float = 0.05) -> MarketSnapshot:
    """Load a directory of ``<TICKER>.csv`` files into an aligned snapshot."""
    path = Path(path)
    if not path.is_dir():
        raise ConfigurationError(f"data directory not found: {path}")
    files = sorted(path.glob("*.csv"))
    if not files:
        raise ConfigurationError(f"no CSV files in {path}")
    aligned, exclusions = align(
        [_parse_file(f) for f in files], max_missing_frac=max_missing_frac, min_bars=min_bars
    )
    for ticker, reason in exclusions:
        logger.warning("excluded %s: %s", ticker, reason)
    if not aligned:
        raise ConfigurationError("every ticker was excluded")
    aligned.sort(key=lambda s: s.ticker)
    return MarketSnapshot(
        [s.ticker for s in aligned], aligned, aligned[0].dates, tuple(exclusions)
    )


def write_csv(snapshot: MarketSnapshot, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in snapshot.series:
        with open(directory / f"{s.ticker}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for i in range(len(s)):
                w.writerow([
                    str(s.dates[i]),
                    *(repr(float(getattr(s, f)[i])) for f in PRICE_FIELDS),
                    repr(float(s.volume[i])),
                ])


# --------------------------------------------------------------------------
# synthetic markets


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the planted-group random-walk market.

    Each group has a latent driver direction that flips day to day with
    probability ``(1 - driver_autocorr) / 2``; a stock's daily direction equals
    its group driver with probability ``signal_strength`` and the opposite
    otherwise. Trading volume anticipates the group driver: log volume on
    day k is shifted by ``volume_lead`` noise standard deviations towards the
    driver of day k + 1, so each stock carries a noisy, continuous view of
    tomorrow's group move.
    """

    n_stocks: int = 30
    n_days: int = 400
    n_groups: int = 3
    signal_strength: float = 0.75
    seed: int = 0
    driver_autocorr: float = -0.6
    volume_lead: float = 1.0
    volatility: float = 0.015
    start: str = "2015-01-02"

    def validate(self):
        if self.n_stocks < 2:
            raise ConfigurationError("n_stocks must be >= 2")
        if self.n_days < 120:
            raise ConfigurationError("n_days must be >= 120")
        if not 1 <= self.n_groups <= self.n_stocks:
            raise ConfigurationError("n_groups must be in [1, n_stocks]")
        if not 0.5 <= self.signal_strength <= 1.0:
            raise ConfigurationError("signal_strength must be in [0.5, 1]")
        if not -1.0 <= self.driver_autocorr <= 1.0:
            raise ConfigurationError("driver_autocorr must be in [-1, 1]")
        if not np.isfinite(self.volume_lead) or self.volume_lead < 0:
            raise ConfigurationError("volume_lead must be >= 0")
        if self.volatility <= 0:
            raise ConfigurationError("volatility must be positive")


def generate_synthetic(config: SynthConfig) -> MarketSnapshot:
    config.validate()
    rng = np.random.default_rng(config.seed)
    m, n, g = config.n_stocks, config.n_days, config.n_groups
    sigma = config.volatility
    width = len(str(m - 1))
    tickers = [f"S{i:0{width}d}" for i in range(m)]
    groups = np.arange(m) * g // m

    stay = (1.0 + config.driver_autocorr) / 2.0
    flips = np.where(rng.random((g, n + 1)) < stay, 1, -1)
    flips[:, 0] = np.where(rng.random(g) < 0.5, 1, -1)
    # one extra driver step so the last day's volume also has a "tomorrow"
    drivers_ext = np.cumprod(flips, axis=1).astype(np.int8)
    drivers = drivers_ext[:, :n]

    agree = np.where(rng.random((m, n)) < config.signal_strength, 1, -1)
    direction = drivers[groups] * agree
    # strictly positive magnitude so consecutive closes never tie
    magnitude = sigma * (np.abs(rng.standard_normal((m, n))) + 0.01)
    log_ret = direction * magnitude
    log_ret[:, 0] = 0.0
    start_price = 20.0 * np.exp(rng.uniform(0.0, 2.0, m))
    close = start_price[:, None] * np.exp(np.cumsum(log_ret, axis=1))
    prev_close = np.concatenate([start_price[:, None], close[:, :-1]], axis=1)
    open_ = prev_close * np.exp(rng.normal(0.0, sigma / 3.0, (m, n)))
    high = np.maximum(open_, close) * np.exp(np.abs(rng.normal(0.0, sigma / 2.0, (m, n))))
    low = np.minimum(open_, close) * np.exp(-np.abs(rng.normal(0.0, sigma / 2.0, (m, n))))
    vol_noise = 0.3
    lead = config.volume_lead * vol_noise * drivers_ext[groups, 1:]
    volume = np.round(1e6 * np.exp(lead + rng.normal(0.0, vol_noise, (m, n))))

    calendar = np.busday_offset(as_day(config.start), np.arange(n), roll="forward")
    series = [
        OhlcvSeries(tickers[i], calendar, open_[i], high[i], low[i], close[i], close[i], volume[i])
        for i in range(m)
    ]
    return MarketSnapshot(tickers, series, calendar, groups=groups, drivers=drivers)


# --------------------------------------------------------------------------
# walk-forward windows


@dataclass(frozen=True)
class WindowSpec:
    """Validation is the ``validation_days`` labeled days right before ``target_day``."""

    target_day: object
    validation_days: int = 20


@dataclass(frozen=True)
class WindowSplit:
    """Calendar indices of the training and validation samples (shared by all stocks)."""

    train: np.ndarray
    validation: np.ndarray
    target: int

    @property
    def train_end(self) -> int:
        return int(self.train[-1])


def split(
    snapshot: MarketSnapshot,
    spec: WindowSpec,
    lookback: int = LOOKBACK,
    min_train: int = MIN_TRAIN_DAYS,
) -> WindowSplit:
    """Walk-forward split for predicting ``spec.target_day``.

    A day ``k`` is a labeled sample when its features exist (``k >= lookback``)
    and its next close is known at prediction time (``k + 1 <= target``).
    """
    if spec.validation_days < 1:
        raise ConfigurationError("validation_days must be >= 1")
    t = snapshot.day_index(spec.target_day)
    labeled = np.arange(lookback, t)
    if len(labeled) < spec.validation_days + min_train:
        raise WindowingError(
            f"{len(labeled)} labeled days before {snapshot.calendar[t]}; "
            f"need {spec.validation_days} validation + {min_train} training"
        )
    d = spec.validation_days
    return WindowSplit(labeled[:-d], labeled[-d:], t)
