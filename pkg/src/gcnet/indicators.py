"""Technical indicators, their ternary signals, and next-day movement labels.

Every indicator is computed over the whole series in one pass with trailing
windows or forward recursions only, so a day's value never depends on later
bars. Rows before :data:`~gcnet.market_data.LOOKBACK` are NaN in the raw
tables and rejected by the per-day accessors.
"""

from __future__ import annotations

import csv
import weakref
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, LabelUnavailableError, WindowingError
from .market_data import LOOKBACK, MarketSnapshot, OhlcvSeries, as_day

PRICE_NAMES = ("OP", "HP", "LP", "CP", "Volume", "CCI", "SAR", "ADX", "MFI", "RSI", "SK", "SD")
SIGNAL_NAMES = (
    "RSI-S", "BB-S", "MACD-S", "SAR-S", "ADX-S", "S-S",
    "MFI-S", "CCI-S", "V-S", "CPOP-S", "CPCPY-S",
)
FEATURE_NAMES = PRICE_NAMES + SIGNAL_NAMES
N_FEATURES = len(FEATURE_NAMES)
N_SIGNALS = len(SIGNAL_NAMES)
SIGNAL_SLICE = slice(len(PRICE_NAMES), N_FEATURES)


@dataclass(frozen=True)
class IndicatorParams:
    rsi: int = 14
    bb: int = 20
    bb_width: float = 2.0
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9
    sar_step: float = 0.02
    sar_max: float = 0.2
    adx: int = 14
    adx_threshold: float = 25.0
    stoch: int = 14
    stoch_smooth: int = 3
    mfi: int = 14
    cci: int = 20
    volume_avg: int = 5


DEFAULT_PARAMS = IndicatorParams()


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema: tuple = FEATURE_NAMES

    def __post_init__(self):
        if len(self.values) != len(self.schema):
            raise ContractError("feature vector length does not match schema")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("non-finite feature value")


@dataclass(frozen=True)
class SignalVector:
    values: np.ndarray
    schema: tuple = SIGNAL_NAMES

    def __post_init__(self):
        if len(self.values) != len(self.schema):
            raise ContractError("signal vector length does not match schema")
        if not np.all(np.isin(self.values, (-1.0, 0.0, 1.0))):
            raise ContractError("signal outside {-1, 0, +1}")


# --------------------------------------------------------------------------
# indicator primitives (full-length arrays, NaN where undefined)


def sma(x, n):
    out = np.full(len(x), np.nan)
    if len(x) >= n:
        out[n - 1:] = sliding_window_view(x, n).mean(axis=1)
    return out


def ema(x, n):
    """Exponential average with alpha = 2/(n+1), seeded at the first value."""
    alpha = 2.0 / (n + 1)
    out = np.empty(len(x))
    acc = x[0]
    for k, v in enumerate(x):
        acc = v if k == 0 else acc + alpha * (v - acc)
        out[k] = acc
    return out


def _wilder_mean(x, n, first):
    """Wilder smoothing of x[first:], seeded by the mean of its first n values."""
    out = np.full(len(x), np.nan)
    if len(x) < first + n:
        return out
    acc = x[first:first + n].mean()
    out[first + n - 1] = acc
    for k in range(first + n, len(x)):
        acc = (acc * (n - 1) + x[k]) / n
        out[k] = acc
    return out


def _ratio_index(up, down):
    """100 - 100/(1 + up/down) with flat windows (0/0) mapped to 50."""
    out = np.full(len(up), np.nan)
    ok = ~np.isnan(up)
    u, d = up[ok], down[ok]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(d > 0, 100.0 - 100.0 / (1.0 + u / np.where(d > 0, d, 1.0)), 100.0)
    val = np.where((u == 0) & (d == 0), 50.0, val)
    out[ok] = val
    return out


def rsi(close, n=14):
    delta = np.diff(close, prepend=close[0])
    gain = np.maximum(delta, 0.0)
    loss = np.maximum(-delta, 0.0)
    return _ratio_index(_wilder_mean(gain, n, 1), _wilder_mean(loss, n, 1))


def bollinger(close, n=20, width=2.0):
    mid = sma(close, n)
    sd = np.full(len(close), np.nan)
    if len(close) >= n:
        sd[n - 1:] = sliding_window_view(close, n).std(axis=1)
    return mid - width * sd, mid, mid + width * sd


def macd(close, fast=12, slow=26, signal=9):
    line = ema(close, fast) - ema(close, slow)
    return line, ema(line, signal)


def parabolic_sar(high, low, close, step=0.02, max_step=0.2):
    n = len(close)
    out = np.empty(n)
    up = n < 2 or close[1] >= close[0]
    sar = low[0] if up else high[0]
    ep = high[0] if up else low[0]
    af = step
    out[0] = sar
    for k in range(1, n):
        sar = sar + af * (ep - sar)
        if up:
            sar = min(sar, low[k - 1], low[k - 2] if k >= 2 else low[k - 1])
            if low[k] < sar:
                up, sar, ep, af = False, ep, low[k], step
            elif high[k] > ep:
                ep, af = high[k], min(af + step, max_step)
        else:
            sar = max(sar, high[k - 1], high[k - 2] if k >= 2 else high[k - 1])
            if high[k] > sar:
                up, sar, ep, af = True, ep, high[k], step
            elif low[k] < ep:
                ep, af = low[k], min(af + step, max_step)
        out[k] = sar
    return out


def _wilder_sum(x, n, first):
    out = np.full(len(x), np.nan)
    if len(x) < first + n:
        return out
    acc = x[first:first + n].sum()
    out[first + n - 1] = acc
    for k in range(first + n, len(x)):
        acc = acc - acc / n + x[k]
        out[k] = acc
    return out


def adx(high, low, close, n=14):
    """Returns (ADX, +DI, -DI)."""
    prev_close = np.concatenate([[close[0]], close[:-1]])
    tr = np.maximum.reduce([high - low, np.abs(high - prev_close), np.abs(low - prev_close)])
    up = np.diff(high, prepend=high[0])
    down = -np.diff(low, prepend=low[0])
    plus_dm = np.where((up > down) & (up > 0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0), down, 0.0)
    str_ = _wilder_sum(tr, n, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plus_di = np.where(str_ > 0, 100.0 * _wilder_sum(plus_dm, n, 1) / str_, 0.0)
        minus_di = np.where(str_ > 0, 100.0 * _wilder_sum(minus_dm, n, 1) / str_, 0.0)
        total = plus_di + minus_di
        dx = np.where(total > 0, 100.0 * np.abs(plus_di - minus_di) / total, 0.0)
    plus_di[np.isnan(str_)] = np.nan
    minus_di[np.isnan(str_)] = np.nan
    return _wilder_mean(dx, n, n), plus_di, minus_di


def stochastic(high, low, close, n=14, smooth=3):
    """Returns slow %K and slow %D."""
    fast = np.full(len(close), np.nan)
    if len(close) >= n:
        hh = sliding_window_view(high, n).max(axis=1)
        ll = sliding_window_view(low, n).min(axis=1)
        rng = hh - ll
        c = close[n - 1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            fast[n - 1:] = np.where(rng > 0, 100.0 * (c - ll) / rng, 50.0)
    slow_k = sma(np.nan_to_num(fast, nan=0.0), smooth)
    slow_k[: n - 1 + smooth - 1] = np.nan
    slow_d = sma(np.nan_to_num(slow_k, nan=0.0), smooth)
    slow_d[: n - 1 + 2 * (smooth - 1)] = np.nan
    return slow_k, slow_d


def typical_price(high, low, close):
    return (high + low + close) / 3.0


def mfi(high, low, close, volume, n=14):
    tp = typical_price(high, low, close)
    flow = tp * volume
    dtp = np.diff(tp, prepend=tp[0])
    pos = np.where(dtp > 0, flow, 0.0)
    neg = np.where(dtp < 0, flow, 0.0)
    up = np.full(len(tp), np.nan)
    down = np.full(len(tp), np.nan)
    if len(tp) > n:
        up[n:] = sliding_window_view(pos[1:], n).sum(axis=1)
        down[n:] = sliding_window_view(neg[1:], n).sum(axis=1)
    return _ratio_index(up, down)


def cci(high, low, close, n=20):
    tp = typical_price(high, low, close)
    out = np.full(len(tp), np.nan)
    if len(tp) >= n:
        win = sliding_window_view(tp, n)
        mean = win.mean(axis=1)
        mad = np.abs(win - mean[:, None]).mean(axis=1)
        dev = tp[n - 1:] - mean
        with np.errstate(divide="ignore", invalid="ignore"):
            out[n - 1:] = np.where(mad > 0, dev / (0.015 * np.where(mad > 0, mad, 1.0)), 0.0)
    return out


def _band_signal(value, low, high):
    """+1 below ``low`` (oversold), -1 above ``high`` (overbought), else 0."""
    return np.where(value < low, 1.0, np.where(value > high, -1.0, 0.0))


# --------------------------------------------------------------------------
# feature tables


def feature_table(series: OhlcvSeries, params: IndicatorParams = DEFAULT_PARAMS) -> np.ndarray:
    """(n_days, 23) Table-1 features in :data:`FEATURE_NAMES` order; NaN before LOOKBACK."""
    o, h, lo, c, v = series.open, series.high, series.low, series.close, series.volume
    n = len(c)
    p = params
    rsi_ = rsi(c, p.rsi)
    bb_low, _, bb_high = bollinger(c, p.bb, p.bb_width)
    macd_line, macd_sig = macd(c, p.macd_fast, p.macd_slow, p.macd_signal)
    sar = parabolic_sar(h, lo, c, p.sar_step, p.sar_max)
    adx_, plus_di, minus_di = adx(h, lo, c, p.adx)
    sk, sd = stochastic(h, lo, c, p.stoch, p.stoch_smooth)
    mfi_ = mfi(h, lo, c, v, p.mfi)
    cci_ = cci(h, lo, c, p.cci)

    vol_avg = np.full(n, np.nan)
    k = p.volume_avg
    if n > k:
        vol_avg[k:] = sliding_window_view(v[:-1], k).mean(axis=1)
    prev_close = np.concatenate([[np.nan], c[:-1]])

    signals = [
        _band_signal(rsi_, 30.0, 70.0),
        np.where(c < bb_low, 1.0, np.where(c > bb_high, -1.0, 0.0)),
        np.sign(macd_line - macd_sig),
        np.where(sar < c, 1.0, -1.0),
        np.where(adx_ > p.adx_threshold, np.sign(plus_di - minus_di), 0.0),
        _band_signal(sk, 20.0, 80.0),
        _band_signal(mfi_, 20.0, 80.0),
        _band_signal(cci_, -100.0, 100.0),
        np.sign(v - vol_avg),
        np.sign(c - o),
        np.sign(c - prev_close),
    ]
    table = np.column_stack([o, h, lo, c, v, cci_, sar, adx_, mfi_, rsi_, sk, sd, *signals])
    table[:LOOKBACK] = np.nan
    return table


def next_day_labels(close: np.ndarray) -> np.ndarray:
    """+1 when tomorrow closes strictly higher, -1 otherwise (ties fall); 0 on the last day."""
    out = np.zeros(len(close), np.int8)
    out[:-1] = np.where(close[1:] > close[:-1], 1, -1)
    return out


def _day_pos(series: OhlcvSeries, day) -> int:
    if isinstance(day, (int, np.integer)):
        pos = int(day)
        if not 0 <= pos < len(series):
            raise WindowingError(f"day index {day} outside series")
        return pos
    target = as_day(day)
    pos = int(np.searchsorted(series.dates, target))
    if pos >= len(series) or series.dates[pos] != target:
        raise WindowingError(f"{target} not in {series.ticker}")
    return pos


def compute_features(series: OhlcvSeries, day, params: IndicatorParams = DEFAULT_PARAMS) -> FeatureVector:
    pos = _day_pos(series, day)
    if pos < LOOKBACK:
        raise WindowingError(f"{series.ticker}: need {LOOKBACK} prior bars, have {pos}")
    return FeatureVector(feature_table(series.head(pos + 1), params)[pos])


def compute_signals(series: OhlcvSeries, day, params: IndicatorParams = DEFAULT_PARAMS) -> SignalVector:
    return SignalVector(compute_features(series, day, params).values[SIGNAL_SLICE])


def movement_label(series: OhlcvSeries, day) -> int:
    pos = _day_pos(series, day)
    if pos + 1 >= len(series):
        raise LabelUnavailableError(f"{series.ticker}: no close after {series.dates[pos]}")
    return 1 if series.close[pos + 1] > series.close[pos] else -1


# --------------------------------------------------------------------------
# snapshot-level caches

_CUBES: "weakref.WeakKeyDictionary[MarketSnapshot, dict]" = weakref.WeakKeyDictionary()


def snapshot_features(snapshot: MarketSnapshot, params: IndicatorParams = DEFAULT_PARAMS) -> np.ndarray:
    """(m, n_days, 23) feature cube, computed once per snapshot."""
    per = _CUBES.setdefault(snapshot, {})
    key = ("features", params)
    if key not in per:
        cube = np.stack([feature_table(s, params) for s in snapshot.series])
        cube.setflags(write=False)
        per[key] = cube
    return per[key]


def snapshot_labels(snapshot: MarketSnapshot) -> np.ndarray:
    """(m, n_days) movement labels in {+1, -1}; 0 where the next close is unknown."""
    per = _CUBES.setdefault(snapshot, {})
    if "labels" not in per:
        labels = np.stack([next_day_labels(s.close) for s in snapshot.series])
        labels.setflags(write=False)
        per["labels"] = labels
    return per["labels"]


def write_feature_csv(snapshot: MarketSnapshot, path, params: IndicatorParams = DEFAULT_PARAMS) -> None:
    cube = snapshot_features(snapshot, params)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("date", "ticker") + FEATURE_NAMES)
        for k in range(LOOKBACK, snapshot.n_days):
            for i, ticker in enumerate(snapshot.tickers):
                w.writerow([str(snapshot.calendar[k]), ticker, *(repr(float(x)) for x in cube[i, k])])
