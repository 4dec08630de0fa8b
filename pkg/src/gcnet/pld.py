"""Plausible label discovery: pick which test-day nodes get initial labels, and which labels.

Each stock's pool members are trained on older samples and scored on the
``d`` most recent ones with recency-decayed accuracy. The best member's
score (predictability) times the node's clustering density gives its
privilege; the top ``ceil(n * m)`` privileged nodes are labeled with their
best member's prediction for the target day.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .classifiers import POOL_ORDER, Classifier, LabeledDataset, train_pool
from .errors import ConfigurationError, ContractError
from .influence import InfluenceGraph, densities


@dataclass(frozen=True)
class PredictorScore:
    stock: int
    algorithm: str
    score: float
    degenerate: bool = False


@dataclass(frozen=True)
class NodePrivilege:
    stock: int
    predictability: float
    density: float
    best: str | None = None
    flagged: bool = False

    @property
    def privilege(self) -> float:
        return self.predictability * self.density


@dataclass(frozen=True)
class PartialLabeling:
    labels: dict  # node id -> +1 / -1
    coverage: float

    def as_array(self, m: int) -> np.ndarray:
        out = np.zeros(m, np.int8)
        for node, label in self.labels.items():
            out[node] = label
        return out


def decay_weights(d: int, c: float) -> np.ndarray:
    """Weights for validation samples ordered oldest -> newest; the newest gets 1."""
    return (1.0 - c) ** np.arange(d - 1, -1, -1, dtype=np.float64)


def decayed_score(correct, c: float) -> float:
    """sum_i a_{t-1-i} (1-c)^i for a correctness pattern ordered oldest -> newest."""
    if not 0.0 < c < 1.0:
        raise ConfigurationError("decay c must lie in (0, 1)")
    correct = np.asarray(correct, dtype=np.float64)
    if correct.size == 0:
        raise ContractError("empty validation set")
    w = decay_weights(len(correct), c)
    total = 0.0
    for a, wi in zip(correct[::-1], w[::-1]):
        total += a * wi
    return total


def score_predictor(model: Classifier, validation: LabeledDataset, c: float = 0.01,
                    stock: int = -1) -> PredictorScore:
    if len(validation) == 0:
        raise ContractError("empty validation set")
    correct = model.predict(validation.X) == validation.y
    return PredictorScore(stock, model.kind, decayed_score(correct, c), model.degenerate)


def best_predictor(scores) -> int:
    """Index of the highest score; ties go to the earliest entry (pool order).

    Degenerate members are skipped; -1 when every member is degenerate.
    """
    best, best_val = -1, -math.inf
    for k, s in enumerate(scores):
        if not s.degenerate and s.score > best_val:
            best, best_val = k, s.score
    return best


def rank_nodes(graph: InfluenceGraph, pool_scores) -> list:
    """Privilege per stock from per-stock lists of :class:`PredictorScore` (in pool order)."""
    if len(pool_scores) != graph.m:
        raise ContractError("need one score list per node")
    dens = densities(graph)
    out = []
    for i, scores in enumerate(pool_scores):
        k = best_predictor(scores)
        if k < 0:
            out.append(NodePrivilege(i, 0.0, float(dens[i]), None, flagged=True))
        else:
            out.append(NodePrivilege(i, scores[k].score, float(dens[i]), scores[k].algorithm))
    return out


def label_count(n: float, m: int) -> int:
    if not 0.0 < n <= 1.0:
        raise ConfigurationError(f"coverage n={n} outside (0, 1]")
    # guard against 0.3 * 10 = 3.0000000000000004
    return min(m, math.ceil(round(n * m, 9)))


def _labels_for(nodes, forecasts) -> dict:
    return {int(i): int(forecasts[i]) for i in sorted(nodes)}


def _forecasts(best_models, target_features):
    out = []
    for model, x in zip(best_models, target_features):
        out.append(1 if int(model.predict(np.asarray(x, dtype=np.float64))[0]) == 1 else -1)
    return out


def select_top(ranking, forecasts, n: float) -> PartialLabeling:
    """Top ``ceil(n*m)`` nodes by privilege (ties -> lower node id), labeled with ``forecasts``.

    ``forecasts[i]`` is the best member's call for stock i on the target day
    as +1 (rise) / -1 (fall).
    """
    k = label_count(n, len(ranking))
    order = sorted(ranking, key=lambda r: (-r.privilege, r.stock))
    return PartialLabeling(_labels_for((r.stock for r in order[:k]), forecasts), n)


def select_random(ranking, forecasts, n: float, seed: int = 0) -> PartialLabeling:
    k = label_count(n, len(ranking))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ranking), size=k, replace=False)
    return PartialLabeling(_labels_for(chosen, forecasts), n)


def assign_labels(ranking, best_models, target_features, n: float) -> PartialLabeling:
    return select_top(ranking, _forecasts(best_models, target_features), n)


def assign_labels_random(ranking, best_models, target_features, n: float, seed: int = 0) -> PartialLabeling:
    return select_random(ranking, _forecasts(best_models, target_features), n, seed)


# --------------------------------------------------------------------------
# per-stock pool evaluation


@dataclass(frozen=True)
class StockPoolResult:
    """Everything PLD needs from one stock's pool on one target day."""

    scores: tuple  # PredictorScore per pool member, pool order
    forecasts: tuple  # per member: +1 / -1 for the target day

    def best(self, member: str | None = None) -> int:
        if member is None:
            return best_predictor(self.scores)
        return [s.algorithm for s in self.scores].index(member)


def evaluate_pool(train: LabeledDataset, validation: LabeledDataset, target_x, c: float = 0.01,
                  seed: int = 0, stock: int = -1, members=POOL_ORDER) -> StockPoolResult:
    models = train_pool(train, seed=seed, members=members)
    scores = tuple(
        PredictorScore(stock, model.kind, score_predictor(model, validation, c).score, model.degenerate)
        for model in models
    )
    x = np.asarray(target_x, dtype=np.float64)[None, :]
    forecasts = tuple(1 if int(model.predict(x)[0]) == 1 else -1 for model in models)
    return StockPoolResult(scores, forecasts)


def pld_report(tickers, ranking, labeling: PartialLabeling) -> str:
    rows = []
    for r in ranking:
        rows.append({
            "ticker": tickers[r.stock],
            "best_algorithm": r.best,
            "predictability": r.predictability,
            "density": r.density,
            "privilege": r.privilege,
            "label": labeling.labels.get(r.stock),
            "flagged": r.flagged,
        })
    return json.dumps({"coverage": labeling.coverage, "nodes": rows}, indent=2)
