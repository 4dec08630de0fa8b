"""Influence network: pairwise QDA prediction gains turned into a sparse stock graph.

For a pair of stocks the influence is the mean validation-accuracy gain
obtained when each stock is predicted from the averaged (per-stock
standardized) feature vectors of both stocks instead of its own:

    influence = ((acc_ij - acc_i) + (acc_ji - acc_j)) / 2

Pairs with positive influence become edges weighted by it. The graph is then
sparsified by deleting edges in ascending weight order until the next
deletion would disconnect it.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import LabeledDataset, train_qda
from .errors import ContractError, DegenerateTrainingError
from .indicators import snapshot_features, snapshot_labels
from .market_data import LOOKBACK, MarketSnapshot, WindowSpec, split

logger = logging.getLogger(__name__)

REPAIR_WEIGHT = 1e-6
VALIDATION_FRACTION = 0.2


class DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))
        self.components = n

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        self.components -= 1
        return True


def is_connected(m: int, edges) -> bool:
    dsu = DisjointSet(m)
    for i, j in edges:
        dsu.union(i, j)
    return dsu.components <= 1


@dataclass(frozen=True, eq=False)
class InfluenceGraph:
    """Undirected weighted graph; ``edges`` maps ``(i, j)`` with ``i < j`` to a weight."""

    tickers: tuple
    edges: dict
    built_on: str | None = None
    window: dict | None = None
    repaired: tuple = ()
    flags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tickers", tuple(self.tickers))
        clean = {}
        for (i, j), w in self.edges.items():
            i, j = int(i), int(j)
            if i == j:
                raise ContractError("self-loops are not allowed")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ContractError(f"edge ({i}, {j}) references an unknown node")
            if w < 0 or not np.isfinite(w):
                raise ContractError("edge weights must be finite and non-negative")
            clean[(min(i, j), max(i, j))] = float(w)
        object.__setattr__(self, "edges", dict(sorted(clean.items())))

    @property
    def m(self) -> int:
        return len(self.tickers)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.m, self.m))
        for (i, j), w in self.edges.items():
            A[i, j] = A[j, i] = w
        return A

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.m, np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_connected(self) -> bool:
        return is_connected(self.m, self.edges)

    def replace(self, **changes) -> "InfluenceGraph":
        fields = dict(tickers=self.tickers, edges=self.edges, built_on=self.built_on,
                      window=self.window, repaired=self.repaired, flags=self.flags)
        fields.update(changes)
        return InfluenceGraph(**fields)

    # edge-list export: CSV ``src,dst,weight`` plus a JSON header next to it

    def save(self, csv_path) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("src", "dst", "weight"))
            for (i, j), weight in self.edges.items():
                w.writerow((self.tickers[i], self.tickers[j], format(weight, ".17g")))
        header = {
            "tickers": list(self.tickers),
            "built_on": self.built_on,
            "window": self.window,
            "repaired": [[self.tickers[i], self.tickers[j]] for i, j in self.repaired],
            "flags": list(self.flags),
        }
        csv_path.with_suffix(".json").write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, csv_path) -> "InfluenceGraph":
        csv_path = Path(csv_path)
        header = json.loads(csv_path.with_suffix(".json").read_text())
        index = {t: k for k, t in enumerate(header["tickers"])}
        edges = {}
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for src, dst, weight in reader:
                edges[(index[src], index[dst])] = float(weight)
        return cls(
            header["tickers"], edges, header.get("built_on"), header.get("window"),
            tuple(tuple(sorted((index[a], index[b]))) for a, b in header.get("repaired", [])),
            tuple(header.get("flags", [])),
        )


@dataclass(frozen=True)
class PairInfluence:
    i: int
    j: int
    acc_i: float
    acc_j: float
    acc_ij: float
    acc_ji: float
    degenerate: bool = False
    influence: float = field(init=False)

    def __post_init__(self):
        value = 0.0 if self.degenerate else (
            (self.acc_ij - self.acc_i) + (self.acc_ji - self.acc_j)
        ) / 2.0
        object.__setattr__(self, "influence", value)


# --------------------------------------------------------------------------
# windows and per-stock standardized samples


def graph_spec(snapshot: MarketSnapshot, target_day, validation_fraction=VALIDATION_FRACTION,
               lookback=None) -> WindowSpec:
    """Window whose validation slice is the last ``validation_fraction`` of the labeled history."""
    lookback = LOOKBACK if lookback is None else lookback
    t = snapshot.day_index(target_day)
    n_labeled = max(t - lookback, 0)
    return WindowSpec(target_day, max(1, int(round(validation_fraction * n_labeled))))


@dataclass(frozen=True)
class _Samples:
    Z_train: np.ndarray  # (m, n_train, f), standardized per stock on its training rows
    Z_val: np.ndarray
    y_train: np.ndarray  # (m, n_train) class indices
    y_val: np.ndarray
    train_days: np.ndarray
    val_days: np.ndarray


def _samples(snapshot: MarketSnapshot, spec: WindowSpec) -> _Samples:
    win = split(snapshot, spec)
    cube = snapshot_features(snapshot)
    labels = snapshot_labels(snapshot)
    X_train = cube[:, win.train]
    X_val = cube[:, win.validation]
    mean = X_train.mean(axis=1, keepdims=True)
    std = X_train.std(axis=1, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return _Samples(
        (X_train - mean) / std, (X_val - mean) / std,
        (labels[:, win.train] == 1).astype(np.int64), (labels[:, win.validation] == 1).astype(np.int64),
        win.train, win.validation,
    )


def _qda_accuracy(Z_train, y_train, Z_val, y_val):
    model = train_qda(LabeledDataset(Z_train, y_train))
    return float(np.mean(model.predict(Z_val) == y_val))


def _solo_accuracies(s: _Samples, nodes=None):
    acc = np.full(len(s.Z_train), np.nan)
    for i in range(len(acc)) if nodes is None else nodes:
        try:
            acc[i] = _qda_accuracy(s.Z_train[i], s.y_train[i], s.Z_val[i], s.y_val[i])
        except DegenerateTrainingError:
            logger.info("QDA degenerate for node %d", i)
    return acc


def _pair(s: _Samples, i, j, acc_i, acc_j) -> PairInfluence:
    V_train = (s.Z_train[i] + s.Z_train[j]) / 2.0
    V_val = (s.Z_val[i] + s.Z_val[j]) / 2.0
    if np.isnan(acc_i) or np.isnan(acc_j):
        return PairInfluence(i, j, 0.0, 0.0, 0.0, 0.0, degenerate=True)
    try:
        acc_ij = _qda_accuracy(V_train, s.y_train[i], V_val, s.y_val[i])
        acc_ji = _qda_accuracy(V_train, s.y_train[j], V_val, s.y_val[j])
    except DegenerateTrainingError:
        return PairInfluence(i, j, acc_i, acc_j, 0.0, 0.0, degenerate=True)
    return PairInfluence(i, j, acc_i, acc_j, acc_ij, acc_ji)


def pair_influence(snapshot: MarketSnapshot, i: int, j: int, spec: WindowSpec) -> PairInfluence:
    if i == j:
        raise ContractError("a stock cannot be paired with itself")
    if not (0 <= i < snapshot.m and 0 <= j < snapshot.m):
        raise ContractError("unknown node")
    s = _samples(snapshot, spec)
    acc = _solo_accuracies(s, (i, j))
    return _pair(s, i, j, acc[i], acc[j])


def influence_matrix(snapshot: MarketSnapshot, spec: WindowSpec):
    """Symmetric matrix of pair influences (zero diagonal) and the list of degenerate pairs."""
    s = _samples(snapshot, spec)
    acc = _solo_accuracies(s)
    m = snapshot.m
    out = np.zeros((m, m))
    degenerate = []
    for i in range(m):
        for j in range(i + 1, m):
            p = _pair(s, i, j, acc[i], acc[j])
            out[i, j] = out[j, i] = p.influence
            if p.degenerate:
                degenerate.append((i, j))
    return out, degenerate


# --------------------------------------------------------------------------
# graph assembly


def repair_connectivity(m: int, edges: dict, scores: np.ndarray):
    """Join components with the highest-scoring cross-component pairs at weight REPAIR_WEIGHT."""
    dsu = DisjointSet(m)
    for i, j in edges:
        dsu.union(i, j)
    edges = dict(edges)
    added = []
    while dsu.components > 1:
        roots = np.array([dsu.find(k) for k in range(m)])
        cross = roots[:, None] != roots[None, :]
        masked = np.where(np.triu(cross, 1), scores, -np.inf)
        # argmax over the row-major flattening picks the lexicographically first pair on ties
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        edges[(int(i), int(j))] = REPAIR_WEIGHT
        added.append((int(i), int(j)))
        dsu.union(int(i), int(j))
    return edges, added


def sparsify(graph: InfluenceGraph) -> InfluenceGraph:
    """Delete edges lightest-first (ties by node ids) until a deletion would disconnect."""
    if graph.m <= 1:
        return graph
    order = sorted(graph.edges.items(), key=lambda e: (e[1], e[0]))
    dsu = DisjointSet(graph.m)
    for pos in range(len(order) - 1, -1, -1):
        dsu.union(*order[pos][0])
        if dsu.components == 1:
            return graph.replace(
                edges=dict(order[pos:]),
                repaired=tuple(e for e in graph.repaired if e in dict(order[pos:])),
            )
    raise ContractError("cannot sparsify a disconnected graph")


def graph_from_scores(tickers, scores: np.ndarray, built_on=None, window=None, flags=()) -> InfluenceGraph:
    """Positive-score edges, connectivity repair, then sparsification."""
    m = len(tickers)
    if m < 2:
        raise ContractError("need at least two stocks")
    edges = {(i, j): scores[i, j] for i in range(m) for j in range(i + 1, m) if scores[i, j] > 0}
    edges, added = repair_connectivity(m, edges, scores)
    flags = tuple(flags)
    if added:
        logger.info("connectivity repaired with %d edge(s)", len(added))
        flags += (f"repaired:{len(added)}",)
    graph = InfluenceGraph(tickers, edges, built_on, window, tuple(added), flags)
    return sparsify(graph)


def _window_info(snapshot, spec):
    win = split(snapshot, spec)
    cal = snapshot.calendar
    return {
        "train": [str(cal[win.train[0]]), str(cal[win.train[-1]])],
        "validation": [str(cal[win.validation[0]]), str(cal[win.validation[-1]])],
    }


def build_influence_graph(snapshot: MarketSnapshot, spec: WindowSpec) -> InfluenceGraph:
    if snapshot.m < 2:
        raise ContractError("need at least two stocks")
    scores, degenerate = influence_matrix(snapshot, spec)
    flags = (f"degenerate_pairs:{len(degenerate)}",) if degenerate else ()
    built_on = str(snapshot.calendar[snapshot.day_index(spec.target_day)])
    return graph_from_scores(snapshot.tickers, scores, built_on, _window_info(snapshot, spec), flags)


def correlation_matrix(snapshot: MarketSnapshot, spec: WindowSpec) -> np.ndarray:
    """Pearson correlation of daily close-to-close returns over the training window."""
    win = split(snapshot, spec)
    closes = snapshot.closes()
    days = win.train[win.train >= 1]
    returns = closes[:, days] / closes[:, days - 1] - 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(returns)
    corr = np.nan_to_num(np.atleast_2d(corr), nan=0.0)
    np.fill_diagonal(corr, 0.0)
    return corr


def build_correlation_graph(snapshot: MarketSnapshot, spec: WindowSpec) -> InfluenceGraph:
    if snapshot.m < 2:
        raise ContractError("need at least two stocks")
    scores = correlation_matrix(snapshot, spec)
    built_on = str(snapshot.calendar[snapshot.day_index(spec.target_day)])
    return graph_from_scores(snapshot.tickers, scores, built_on, _window_info(snapshot, spec),
                             ("correlation",))


# --------------------------------------------------------------------------
# neighbourhood density


def densities(graph: InfluenceGraph) -> np.ndarray:
    """Weighted local clustering coefficient of every node, weights scaled by the graph maximum.

    ``C_i = sum_{j != k} (w_ij w_ik w_jk)^(1/3) / (deg_i (deg_i - 1))`` over
    ordered neighbour pairs, i.e. the diagonal of the cubed matrix of cube-root
    weights; nodes of degree <= 1 get 0.
    """
    A = graph.adjacency()
    top = A.max() if A.size else 0.0
    if top <= 0:
        return np.zeros(graph.m)
    Q = np.cbrt(A / top)
    triangles = np.einsum("ij,jk,ki->i", Q, Q, Q)
    deg = graph.degree()
    denom = deg * (deg - 1)
    return np.where(deg > 1, triangles / np.where(denom > 0, denom, 1), 0.0)


def density(graph: InfluenceGraph, node: int) -> float:
    if not 0 <= node < graph.m:
        raise ContractError(f"unknown node {node}")
    return float(densities(graph)[node])
