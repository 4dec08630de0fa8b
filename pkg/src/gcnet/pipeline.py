"""Walk-forward GCNET backtest: graph cadence, PLD labeling, per-day GCN training, metrics."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .classifiers import POOL_ORDER, LabeledDataset, train_pool
from .errors import ConfigurationError, ContractError, GcnetError, RunFailure, WindowingError
from .gcn import DayGraphStack, GcnHyperParams, normalize_adjacency, train_on_stack
from .indicators import SIGNAL_SLICE, snapshot_features, snapshot_labels
from .influence import build_correlation_graph, build_influence_graph, graph_spec
from .market_data import (
    LOOKBACK, MarketSnapshot, SynthConfig, WindowSpec, generate_synthetic, load_csv, split, to_date,
)
from .pld import (
    PredictorScore, StockPoolResult, best_predictor, rank_nodes, score_predictor, select_random, select_top,
)

logger = logging.getLogger(__name__)

GRAPH_MODES = ("influence", "correlation")
TRAINING_MODES = ("semi-supervised", "supervised")
PREDICTION_HEADER = ("date", "ticker", "predicted", "actual", "initially_labeled", "initial_label")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a backtest. Field names double as config-file keys."""

    # data: a CSV directory, or a synthetic market when ``data`` is empty
    data: str = ""
    min_bars: int = 60
    max_missing_frac: float = 0.05
    synth_stocks: int = 30
    synth_days: int = 400
    synth_groups: int = 3
    synth_signal: float = 0.75
    synth_autocorr: float = -0.6
    synth_volume_lead: float = 1.0
    synth_seed: int = 0
    # ranges: explicit ISO dates, or the last ``test_days`` labeled days
    test_start: str = ""
    test_end: str = ""
    test_days: int = 40
    validation_start: str = ""
    validation_end: str = ""
    validation_range_days: int = 10
    # modes
    graph_mode: str = "influence"
    labeling: str = "pld"
    training: str = "semi-supervised"
    # graph / PLD
    n: float = 0.4
    rebuild_every: int = 30
    graph_validation_fraction: float = 0.2
    pld_validation_days: int = 20
    decay: float = 0.01
    pld_retrain_every: int = 1
    # GCN
    lr: float = 0.01
    dropout: float = 0.5
    l2: float = 5e-4
    epochs_per_graph: int = 50
    # run
    seed: int = 0
    max_skip_fraction: float = 0.1

    def validate(self):
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigurationError(f"graph_mode must be one of {GRAPH_MODES}")
        if self.training not in TRAINING_MODES:
            raise ConfigurationError(f"training must be one of {TRAINING_MODES}")
        if self.labeling not in ("pld", "random"):
            kind, _, member = self.labeling.partition(":")
            if kind != "single" or member not in POOL_ORDER:
                raise ConfigurationError(
                    f"labeling must be pld, random or single:<{'|'.join(POOL_ORDER)}>"
                )
        if not 0.0 < self.n <= 1.0:
            raise ConfigurationError("n must lie in (0, 1]")
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError("decay must lie in (0, 1)")
        if self.pld_validation_days < 1:
            raise ConfigurationError("pld_validation_days must be >= 1 (validation required)")
        for name in ("rebuild_every", "pld_retrain_every", "test_days", "validation_range_days"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.epochs_per_graph < 0:
            raise ConfigurationError("epochs_per_graph must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        return self

    @property
    def gcn_hp(self) -> GcnHyperParams:
        return GcnHyperParams(lr=self.lr, dropout=self.dropout, l2=self.l2,
                              epochs_per_graph=self.epochs_per_graph)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(self.synth_stocks, self.synth_days, self.synth_groups,
                           self.synth_signal, self.synth_seed, self.synth_autocorr,
                           self.synth_volume_lead)


def load_snapshot(config: RunConfig) -> MarketSnapshot:
    if config.data:
        return load_csv(config.data, config.min_bars, config.max_missing_frac)
    return generate_synthetic(config.synth_config())


def day_seed(master: int, day: np.datetime64, stream: int) -> int:
    """Seed for one (day, purpose) pair, independent of how many days are run."""
    ordinal = int(day.astype("datetime64[D]").astype(np.int64))
    return int(np.random.SeedSequence([master, ordinal, stream]).generate_state(1)[0])


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class DailyResult:
    """Per-stock outcome for one test day; ``actual``/``initial_label`` use 0 for "absent"."""

    date: str
    tickers: tuple
    predicted: np.ndarray
    actual: np.ndarray
    initially_labeled: np.ndarray
    initial_label: np.ndarray


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def of(cls, predicted, actual):
        predicted = np.asarray(predicted)
        actual = np.asarray(actual)
        return cls(
            int(np.sum((predicted == 1) & (actual == 1))),
            int(np.sum((predicted == 1) & (actual == -1))),
            int(np.sum((predicted == -1) & (actual == -1))),
            int(np.sum((predicted == -1) & (actual == 1))),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def mcc(self) -> float:
        denom = (self.tp + self.fp) * (self.tp + self.fn) * (self.tn + self.fp) * (self.tn + self.fn)
        if denom == 0:
            return 0.0
        return (self.tp * self.tn - self.fp * self.fn) / math.sqrt(denom)

    def as_dict(self):
        return {"accuracy": self.accuracy, "mcc": self.mcc, "n": self.total,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class EvaluationReport:
    overall: Counts
    initially_labeled: Counts
    unlabeled: Counts
    pld_labels: Counts
    majority_baseline: float

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def mcc(self) -> float:
        return self.overall.mcc

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "mcc": self.mcc,
            "counts": {k: getattr(self.overall, k) for k in ("tp", "fp", "tn", "fn")},
            "majority_baseline": self.majority_baseline,
            "slices": {
                "all": self.overall.as_dict(),
                "initially_labeled": self.initially_labeled.as_dict(),
                "unlabeled": self.unlabeled.as_dict(),
                "pld_initial_labels": self.pld_labels.as_dict(),
            },
        }


def evaluate(results) -> EvaluationReport:
    """Pooled confusion counts over every stock-day with a known outcome."""
    results = list(results)
    if not results:
        raise ContractError("nothing to evaluate")
    pred = np.concatenate([r.predicted for r in results])
    act = np.concatenate([r.actual for r in results])
    lab = np.concatenate([r.initially_labeled for r in results]).astype(bool)
    init = np.concatenate([r.initial_label for r in results])
    known = act != 0
    if not known.any():
        raise ContractError("no result has a realized outcome")
    pred, act, lab, init = pred[known], act[known], lab[known], init[known]
    ups = int(np.sum(act == 1))
    return EvaluationReport(
        Counts.of(pred, act),
        Counts.of(pred[lab], act[lab]),
        Counts.of(pred[~lab], act[~lab]),
        Counts.of(init[lab], act[lab]),
        max(ups, len(act) - ups) / len(act),
    )


def write_predictions(results, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for r in results:
        for k, ticker in enumerate(r.tickers):
            w.writerow((
                r.date, ticker, int(r.predicted[k]),
                int(r.actual[k]) if r.actual[k] != 0 else "",
                int(bool(r.initially_labeled[k])),
                int(r.initial_label[k]) if r.initial_label[k] != 0 else "",
            ))


def predictions_csv(results) -> str:
    buf = io.StringIO()
    write_predictions(results, buf)
    return buf.getvalue()


def read_predictions(fh) -> list:
    """Inverse of :func:`write_predictions`: one :class:`DailyResult` per date."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != PREDICTION_HEADER:
        raise ConfigurationError(f"predictions file must start with {','.join(PREDICTION_HEADER)}")
    by_date = {}
    for row in reader:
        if not row:
            continue
        by_date.setdefault(row[0], []).append(row)
    out = []
    for date, rows in by_date.items():
        as_int = lambda s: int(s) if s != "" else 0  # noqa: E731
        out.append(DailyResult(
            date, tuple(r[1] for r in rows),
            np.array([int(r[2]) for r in rows]), np.array([as_int(r[3]) for r in rows]),
            np.array([r[4] == "1" for r in rows]), np.array([as_int(r[5]) for r in rows]),
        ))
    return out


# --------------------------------------------------------------------------
# caches shared between runs on the same snapshot


class BacktestCache:
    """Graphs and per-stock pool results keyed by everything they depend on.

    Labeling and training modes do not change either, so ablation runs on one
    snapshot can share a cache and skip retraining the classifier pool.
    """

    def __init__(self, snapshot: MarketSnapshot):
        self.snapshot = snapshot
        self.graphs = {}
        self.pool = {}
        self.models = {}


@dataclass
class BacktestResult:
    report: EvaluationReport | None
    daily: list
    graph_builds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def resolve_range(snapshot: MarketSnapshot, start: str, end: str, last_days: int, before: int | None = None):
    """Calendar indices of a test/validation range.

    Without explicit dates the range is the ``last_days`` days ending at the
    last day with a known next close (or right before index ``before``).
    """
    if start or end:
        if not (start and end):
            raise ConfigurationError("give both a start and an end date")
        lo, hi = snapshot.day_index(start), snapshot.day_index(end)
    else:
        hi = (snapshot.n_days - 2) if before is None else before - 1
        lo = hi - last_days + 1
    if lo > hi or lo < 0:
        raise WindowingError("empty or out-of-calendar range")
    return np.arange(lo, hi + 1)


def test_range(snapshot, config: RunConfig):
    return resolve_range(snapshot, config.test_start, config.test_end, config.test_days)


def validation_range(snapshot, config: RunConfig):
    test = test_range(snapshot, config)
    val = resolve_range(snapshot, config.validation_start, config.validation_end,
                        config.validation_range_days, before=int(test[0]))
    if val[-1] >= test[0]:
        raise ConfigurationError("validation range must precede the test range")
    return val


def rebuild_days(days, every: int) -> list:
    """Days (from an ordered range) on which the graph is rebuilt."""
    out = []
    for t in days:
        if not out or t - out[-1] >= every:
            out.append(int(t))
    return out


class _Backtest:
    def __init__(self, config: RunConfig, snapshot: MarketSnapshot, cache: BacktestCache):
        self.config = config
        self.snapshot = snapshot
        self.cache = cache
        self.cube = snapshot_features(snapshot)
        self.labels = snapshot_labels(snapshot)
        self.single = config.labeling.partition(":")[2] or None

    # graph ---------------------------------------------------------------

    def graph(self, t):
        cfg = self.config
        key = (cfg.graph_mode, t, cfg.graph_validation_fraction)
        if key not in self.cache.graphs:
            spec = graph_spec(self.snapshot, t, cfg.graph_validation_fraction)
            build = build_influence_graph if cfg.graph_mode == "influence" else build_correlation_graph
            self.cache.graphs[key] = build(self.snapshot, spec)
        return self.cache.graphs[key]

    # pool ----------------------------------------------------------------

    def pool_result(self, i, t, anchor) -> StockPoolResult:
        cfg = self.config
        key = (i, t, anchor, cfg.pld_validation_days, cfg.decay, cfg.seed)
        if key in self.cache.pool:
            return self.cache.pool[key]
        win = split(self.snapshot, WindowSpec(t, cfg.pld_validation_days))
        y = (self.labels[i] == 1).astype(np.int64)
        mkey = (i, anchor, cfg.pld_validation_days, cfg.seed)
        models = self.cache.models.get(mkey)
        if models is None:
            # models are trained on the anchor day's window and reused until the next anchor
            awin = win if anchor == t else split(self.snapshot, WindowSpec(anchor, cfg.pld_validation_days))
            seed = day_seed(cfg.seed, self.snapshot.calendar[anchor], 100 + i)
            models = train_pool(LabeledDataset(self.cube[i, awin.train], y[awin.train]), seed=seed)
            self.cache.models = {k: v for k, v in self.cache.models.items() if k[1] == anchor}
            self.cache.models[mkey] = models
        validation = LabeledDataset(self.cube[i, win.validation], y[win.validation])
        scores = tuple(
            PredictorScore(i, m.kind, score_predictor(m, validation, cfg.decay).score, m.degenerate)
            for m in models
        )
        x = self.cube[i, t][None, :]
        forecasts = tuple(1 if int(m.predict(x)[0]) == 1 else -1 for m in models)
        result = StockPoolResult(scores, forecasts)
        self.cache.pool[key] = result
        return result

    def labeling(self, t, graph, anchor):
        cfg = self.config
        pool = [self.pool_result(i, t, anchor) for i in range(self.snapshot.m)]
        if self.single:
            k = POOL_ORDER.index(self.single)
            scores = [(p.scores[k],) for p in pool]
            forecasts = [p.forecasts[k] for p in pool]
        else:
            scores = [p.scores for p in pool]
            forecasts = []
            for p in pool:
                b = best_predictor(p.scores)
                forecasts.append(p.forecasts[max(b, 0)])
        ranking = rank_nodes(graph, scores)
        if cfg.labeling == "random":
            seed = day_seed(cfg.seed, self.snapshot.calendar[t], 2)
            return select_random(ranking, forecasts, cfg.n, seed), ranking
        return select_top(ranking, forecasts, cfg.n), ranking

    # one day -------------------------------------------------------------

    def run_day(self, t, graph, anchor) -> DailyResult:
        cfg = self.config
        if t - 4 < LOOKBACK:
            raise WindowingError("not enough history for a five-day stack")
        labeling, _ = self.labeling(t, graph, anchor)
        m = self.snapshot.m
        day_t = labeling.as_array(m)
        stack = DayGraphStack(
            normalize_adjacency(graph),
            [self.cube[:, k, SIGNAL_SLICE] for k in range(t - 4, t + 1)],
            [self.labels[:, k] for k in range(t - 4, t)] + [day_t],
        )
        hp = replace(cfg.gcn_hp, seed=day_seed(cfg.seed, self.snapshot.calendar[t], 1))
        _, preds = train_on_stack(stack, hp, supervised=cfg.training == "supervised")
        return DailyResult(
            str(self.snapshot.calendar[t]), self.snapshot.tickers, preds.labels,
            self.labels[:, t].copy(), day_t != 0, day_t,
        )

    def run(self, days) -> BacktestResult:
        cfg = self.config
        daily, skipped, builds = [], [], []
        graph, last_build, anchor = None, None, None
        for pos, t in enumerate(days):
            t = int(t)
            date = str(self.snapshot.calendar[t])
            if pos % cfg.pld_retrain_every == 0:
                anchor = t
            try:
                if last_build is None or t - last_build >= cfg.rebuild_every:
                    graph = self.graph(t)
                    last_build = t
                    builds.append(date)
                    logger.info("graph built on %s: %d edges", date, len(graph.edges))
                daily.append(self.run_day(t, graph, anchor))
            except GcnetError as exc:
                logger.warning("skipping %s: %s", date, exc)
                skipped.append((date, str(exc)))
        if len(days) and len(skipped) > cfg.max_skip_fraction * len(days):
            raise RunFailure(f"skipped {len(skipped)} of {len(days)} days")
        evaluable = [r for r in daily if np.any(r.actual != 0)]
        report = evaluate(evaluable) if evaluable else None
        return BacktestResult(report, daily, builds, skipped)


def run_backtest(config: RunConfig, snapshot: MarketSnapshot | None = None,
                 cache: BacktestCache | None = None, days=None) -> BacktestResult:
    """Walk forward over the test range (or ``days``) predicting every stock each day."""
    config.validate()
    snapshot = load_snapshot(config) if snapshot is None else snapshot
    if cache is None or cache.snapshot is not snapshot:
        cache = BacktestCache(snapshot)
    days = test_range(snapshot, config) if days is None else np.asarray(days)
    return _Backtest(config, snapshot, cache).run(days)


def sweep_n(config: RunConfig, n_values, snapshot: MarketSnapshot | None = None,
            cache: BacktestCache | None = None):
    """Validation-range accuracy per coverage ``n``; returns ``(rows, best_n)``.

    Ties in accuracy go to the smaller ``n``.
    """
    n_values = [float(n) for n in n_values]
    if not n_values:
        raise ConfigurationError("no n values to sweep")
    for n in n_values:
        if not 0.0 < n <= 1.0:
            raise ConfigurationError(f"n={n} outside (0, 1]")
    snapshot = load_snapshot(config) if snapshot is None else snapshot
    cache = BacktestCache(snapshot) if cache is None else cache
    days = validation_range(snapshot, config)
    rows = []
    for n in n_values:
        result = run_backtest(replace(config, n=n), snapshot, cache, days)
        rows.append((n, result.report.accuracy))
    best = min(rows, key=lambda r: (-r[1], r[0]))[0]
    return rows, best


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("n", "validation_accuracy"))
    for n, acc in rows:
        w.writerow((repr(n), repr(acc)))
    return buf.getvalue()


def config_fields():
    return {f.name: f for f in fields(RunConfig)}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys may use dashes."""
    known = config_fields()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def coerce(key: str, value):
    kind = config_fields()[key].type
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {value!r}") from None
    return str(value)


def describe_day(snapshot: MarketSnapshot, t: int) -> str:
    return to_date(snapshot.calendar[t]).isoformat()
