"""Agile base classifiers: QDA, LDA, Gaussian NB, CART, random forest and a small MLP.

All members share one interface (``fit`` / ``decision_function`` /
``predict`` / ``score``), work on binary class indices (0 = fall,
1 = rise) and standardize their inputs with training-set statistics.
``predict`` breaks ties between class scores towards class 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _cart
from .adam import Adam
from .errors import ContractError, DegenerateTrainingError

POOL_ORDER = ("QDA", "LDA", "NB", "DTREE", "RFOREST", "MLP")
RIDGE_STEPS = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
            raise ContractError(f"X {X.shape} and y {y.shape} do not match")
        if not np.all(np.isfinite(X)):
            raise ContractError("non-finite feature value")
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("labels must be 0 (fall) or 1 (rise)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)


class Standardizer:
    def __init__(self, X):
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)

    def __call__(self, X):
        return (X - self.mean) / self.std

    @classmethod
    def identity(cls, f):
        obj = cls.__new__(cls)
        obj.mean = np.zeros(f)
        obj.std = np.ones(f)
        return obj


def _regularized_cholesky(cov):
    """Cholesky factor of ``cov + eps * trace/f * I``, escalating eps until it factors."""
    f = cov.shape[0]
    scale = np.trace(cov) / f
    for eps in RIDGE_STEPS:
        try:
            return np.linalg.cholesky(cov + eps * scale * np.eye(f)), eps
        except np.linalg.LinAlgError:
            continue
    raise DegenerateTrainingError("covariance not invertible after regularization")


class Classifier:
    kind = "BASE"
    degenerate = False

    def fit(self, X, y=None):
        data = X if isinstance(X, LabeledDataset) else LabeledDataset(X, y)
        if len(data) == 0:
            raise ContractError("empty training set")
        self.n_features = data.X.shape[1]
        self.standardizer = Standardizer(data.X)
        self._fit(self.standardizer(data.X), data.y)
        return self

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ContractError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X):
        """(n, 2) per-class scores; larger wins."""
        return self._scores(self.standardizer(self._check(X)))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def score(self, X, y=None):
        return score_accuracy(self, X if isinstance(X, LabeledDataset) else LabeledDataset(X, y))

    def to_dict(self):
        return {
            "kind": self.kind,
            "degenerate": self.degenerate,
            "standardizer": {"mean": self.standardizer.mean.tolist(), "std": self.standardizer.std.tolist()},
            **self._params(),
        }


def _require_two_classes(y):
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise DegenerateTrainingError("training data contains a single class")
    return counts


class QDA(Classifier):
    """Quadratic discriminant analysis.

    ``delta_k(x) = -1/2 log|S_k| - 1/2 (x - mu_k)' S_k^-1 (x - mu_k) + log pi_k``

    With ``shared_covariance=True`` every class uses the pooled covariance,
    which makes the decisions coincide with LDA.
    """

    kind = "QDA"

    def __init__(self, shared_covariance=False):
        self.shared_covariance = shared_covariance

    def _fit(self, Z, y):
        counts = _require_two_classes(y)
        if counts.min() < 2:
            raise DegenerateTrainingError("a class has fewer than two samples")
        self.priors = counts / counts.sum()
        self.means = np.stack([Z[y == k].mean(axis=0) for k in (0, 1)])
        if self.shared_covariance:
            pooled = _pooled_covariance(Z, y, self.means)
            covs = [pooled, pooled]
        else:
            covs = [np.atleast_2d(np.cov(Z[y == k], rowvar=False)) for k in (0, 1)]
        self._set_covariances(covs)

    def _set_covariances(self, covs):
        self.covariances = np.stack(covs)
        self.ridge = []
        self._whiten = []
        self._logdet = np.empty(2)
        for k, cov in enumerate(covs):
            L, eps = _regularized_cholesky(cov)
            self.ridge.append(eps)
            self._whiten.append(np.linalg.inv(L))
            self._logdet[k] = 2.0 * np.log(np.diag(L)).sum()

    @classmethod
    def from_parameters(cls, means, covariances, priors):
        """A QDA acting directly on raw inputs with given class parameters."""
        obj = cls()
        means = np.asarray(means, float)
        obj.n_features = means.shape[1]
        obj.standardizer = Standardizer.identity(obj.n_features)
        obj.priors = np.asarray(priors, float)
        obj.means = means
        obj._set_covariances([np.asarray(c, float) for c in covariances])
        return obj

    def _scores(self, Z):
        out = np.empty((len(Z), 2))
        for k in (0, 1):
            r = (Z - self.means[k]) @ self._whiten[k].T
            out[:, k] = -0.5 * self._logdet[k] - 0.5 * np.einsum("ij,ij->i", r, r) + np.log(self.priors[k])
        return out

    def _params(self):
        return {
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "ridge": self.ridge,
        }


def _pooled_covariance(Z, y, means):
    resid = Z - means[y]
    dof = max(len(Z) - 2, 1)
    return resid.T @ resid / dof


class LDA(Classifier):
    kind = "LDA"

    def _fit(self, Z, y):
        counts = _require_two_classes(y)
        self.priors = counts / counts.sum()
        self.means = np.stack([Z[y == k].mean(axis=0) for k in (0, 1)])
        self.covariance = _pooled_covariance(Z, y, self.means)
        L, self.ridge = _regularized_cholesky(self.covariance)
        # S^-1 mu_k via the Cholesky factor
        self._coef = np.stack([np.linalg.solve(L.T, np.linalg.solve(L, mu)) for mu in self.means])
        self._intercept = -0.5 * np.einsum("ij,ij->i", self.means, self._coef) + np.log(self.priors)

    def _scores(self, Z):
        return Z @ self._coef.T + self._intercept

    def _params(self):
        return {"priors": self.priors.tolist(), "means": self.means.tolist(),
                "covariance": self.covariance.tolist(), "ridge": self.ridge}


class GaussianNB(Classifier):
    kind = "NB"
    var_floor = 1e-9

    def _fit(self, Z, y):
        counts = _require_two_classes(y)
        self.priors = counts / counts.sum()
        self.means = np.stack([Z[y == k].mean(axis=0) for k in (0, 1)])
        self.vars = np.stack([np.maximum(Z[y == k].var(axis=0), self.var_floor) for k in (0, 1)])

    def _scores(self, Z):
        out = np.empty((len(Z), 2))
        for k in (0, 1):
            ll = -0.5 * (np.log(2 * np.pi * self.vars[k]) + (Z - self.means[k]) ** 2 / self.vars[k])
            out[:, k] = ll.sum(axis=1) + np.log(self.priors[k])
        return out

    def _params(self):
        return {"priors": self.priors.tolist(), "means": self.means.tolist(), "vars": self.vars.tolist()}


class _TreeModel(Classifier):
    def _scores(self, Z):
        p = _cart.predict_proba(np.ascontiguousarray(Z), *self._trees)
        return np.column_stack([1.0 - p, p])

    def _params(self):
        names = ("feature", "threshold", "left", "right", "prob")
        return {"trees": [
            {name: arr[t].tolist() for name, arr in zip(names, self._trees)}
            for t in range(self._trees[0].shape[0])
        ]}


class DecisionTree(_TreeModel):
    """CART with Gini impurity."""

    kind = "DTREE"

    def __init__(self, max_depth=5, min_leaf=5):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def _fit(self, Z, y):
        _require_two_classes(y)
        tree = _cart.grow_tree(np.ascontiguousarray(Z), y, self.max_depth, self.min_leaf)
        self._trees = tuple(a[None, :] for a in tree)


class RandomForest(_TreeModel):
    """Bagged CART trees with ``ceil(sqrt(f))`` candidate features per split; soft voting."""

    kind = "RFOREST"

    def __init__(self, n_trees=100, max_depth=5, min_leaf=5, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed

    def _fit(self, Z, y):
        _require_two_classes(y)
        n_try = math.ceil(math.sqrt(Z.shape[1]))
        self._trees = _cart.grow_forest(
            np.ascontiguousarray(Z), y, self.n_trees, self.max_depth, self.min_leaf, n_try,
            self.seed % (2**32),
        )


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


class MLP(Classifier):
    """One hidden ReLU layer, softmax output, full-batch Adam on mean cross-entropy."""

    kind = "MLP"

    def __init__(self, hidden=16, epochs=200, lr=0.01, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def _fit(self, Z, y):
        _require_two_classes(y)
        rng = np.random.default_rng(self.seed)
        f = Z.shape[1]
        self.W1 = glorot_uniform(rng, f, self.hidden)
        self.b1 = np.zeros(self.hidden)
        self.W2 = glorot_uniform(rng, self.hidden, 2)
        self.b2 = np.zeros(2)
        params = [self.W1, self.b1, self.W2, self.b2]
        opt = Adam(params, lr=self.lr)
        onehot = np.eye(2)[y]
        n = len(Z)
        for _ in range(self.epochs):
            pre = Z @ self.W1 + self.b1
            h = np.maximum(pre, 0.0)
            p = _softmax(h @ self.W2 + self.b2)
            d_logits = (p - onehot) / n
            d_h = (d_logits @ self.W2.T) * (pre > 0)
            opt.step([Z.T @ d_h, d_h.sum(axis=0), h.T @ d_logits, d_logits.sum(axis=0)])

    def _scores(self, Z):
        h = np.maximum(Z @ self.W1 + self.b1, 0.0)
        return _softmax(h @ self.W2 + self.b2)

    def _params(self):
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "W2": self.W2.tolist(), "b2": self.b2.tolist()}


class MajorityClass(Classifier):
    """Fallback predictor for a pool member whose training was degenerate."""

    degenerate = True

    def __init__(self, kind="MAJORITY"):
        self.kind = kind

    def _fit(self, Z, y):
        counts = np.bincount(y, minlength=2)
        # ties go to class 0 like every other argmax here
        self.majority = int(counts[1] > counts[0])

    def _scores(self, Z):
        out = np.zeros((len(Z), 2))
        out[:, self.majority] = 1.0
        return out

    def _params(self):
        return {"majority": self.majority}


def make_member(kind: str, seed: int = 0) -> Classifier:
    if kind == "QDA":
        return QDA()
    if kind == "LDA":
        return LDA()
    if kind == "NB":
        return GaussianNB()
    if kind == "DTREE":
        return DecisionTree()
    if kind == "RFOREST":
        return RandomForest(seed=seed)
    if kind == "MLP":
        return MLP(seed=seed)
    raise ContractError(f"unknown pool member {kind!r}")


# --------------------------------------------------------------------------
# functional surface


def train_qda(data: LabeledDataset) -> QDA:
    return QDA().fit(data)


def classify(model: Classifier, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("classify takes a single feature vector")
    return int(model.predict(x)[0])


def train_member(kind: str, data: LabeledDataset, seed: int = 0) -> Classifier:
    """Train one pool member, falling back to a flagged majority predictor when degenerate."""
    try:
        return make_member(kind, seed).fit(data)
    except DegenerateTrainingError:
        return MajorityClass(kind).fit(data)


def train_pool(data: LabeledDataset, seed: int = 0, members=POOL_ORDER) -> list:
    return [train_member(kind, data, seed) for kind in members]


def score_accuracy(model: Classifier, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise ContractError("cannot score on empty data")
    return float(np.mean(model.predict(data.X) == data.y))
