"""A three-layer graph convolutional network trained with exact backprop and Adam.

    Y = softmax(A_hat . ReLU(A_hat . ReLU(A_hat X W0) W1) W2)

with ``A_hat = D^-1/2 (A + I) D^-1/2``. Loss is the cross-entropy summed over
labeled nodes plus ``l2/2 * sum ||W||^2``. Node labels are +1 (rise), -1
(fall) or 0 (unlabeled); class index 1 is "rise".
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .adam import Adam
from .classifiers import glorot_uniform
from .errors import ContractError

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: np.ndarray
    weights: np.ndarray = field(repr=False, default=None)


def normalize_adjacency(graph) -> NormalizedAdjacency:
    """Accepts an :class:`~gcnet.influence.InfluenceGraph` or a dense weight matrix."""
    A = np.asarray(graph.adjacency() if hasattr(graph, "adjacency") else graph, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError("adjacency must be square")
    if np.any(A < 0) or np.any(np.diag(A) != 0) or not np.array_equal(A, A.T):
        raise ContractError("adjacency must be symmetric, non-negative, without self-loops")
    if len(A) > 1 and np.any(A.sum(axis=1) == 0):
        raise ContractError("graph has an isolated node")
    A_tilde = A + np.eye(len(A))
    d_inv_sqrt = 1.0 / np.sqrt(A_tilde.sum(axis=1))
    A_hat = A_tilde * np.outer(d_inv_sqrt, d_inv_sqrt)
    A_hat.setflags(write=False)
    return NormalizedAdjacency(A_hat, A)


@dataclass(frozen=True)
class GcnHyperParams:
    lr: float = 0.01
    dropout: float = 0.5
    l2: float = 5e-4
    epochs_per_graph: int = 50
    hidden: int = 4
    seed: int = 0


@dataclass(frozen=True)
class NodePredictions:
    proba: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        """+1 where rise is strictly more likely, else -1."""
        return np.where(self.proba[:, 1] > self.proba[:, 0], 1, -1).astype(np.int8)


@dataclass
class DayGraphStack:
    """Five chronological day graphs sharing one adjacency; only the last may be partial."""

    adjacency: NormalizedAdjacency
    features: list
    labels: list

    def __post_init__(self):
        m = self.adjacency.matrix.shape[0]
        if len(self.features) != 5 or len(self.labels) != 5:
            raise ContractError("a day-graph stack holds exactly five days")
        for X, y in zip(self.features, self.labels):
            if X.shape[0] != m or len(y) != m:
                raise ContractError("day graph size does not match adjacency")
            if not np.all(np.isin(y, (-1, 0, 1))):
                raise ContractError("labels must be +1, -1 or 0 (unlabeled)")
        if any(np.any(np.asarray(y) == 0) for y in self.labels[:4]):
            raise ContractError("the four history days must be fully labeled")


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class GcnModel:
    def __init__(self, n_features=11, hp: GcnHyperParams = GcnHyperParams(), n_classes=2):
        self.hp = hp
        rng = np.random.default_rng(hp.seed)
        self.W0 = glorot_uniform(rng, n_features, hp.hidden)
        self.W1 = glorot_uniform(rng, hp.hidden, hp.hidden)
        self.W2 = glorot_uniform(rng, hp.hidden, n_classes)
        self.optimizer = Adam(self.weights, lr=hp.lr)

    @property
    def weights(self):
        return [self.W0, self.W1, self.W2]

    def forward(self, A_hat, X, training=False, rng=None, masks=None):
        """Returns ``(Y, cache)``.

        In training mode with dropout, inverted-dropout masks for both hidden
        layers come from ``masks`` when given, otherwise are drawn from ``rng``.
        """
        A = A_hat.matrix if isinstance(A_hat, NormalizedAdjacency) else A_hat
        X = np.asarray(X, dtype=np.float64)
        if A.shape[0] != X.shape[0] or X.shape[1] != self.W0.shape[0]:
            raise ContractError(f"shapes {A.shape} / {X.shape} do not fit W0 {self.W0.shape}")
        p = self.hp.dropout if training else 0.0
        if p > 0 and masks is None:
            keep = 1.0 - p
            masks = tuple(
                (rng.random((X.shape[0], self.hp.hidden)) < keep) / keep for _ in range(2)
            )
        elif p == 0:
            masks = None
        AX = A @ X
        Z0 = AX @ self.W0
        H1 = np.maximum(Z0, 0.0)
        if masks is not None:
            H1 = H1 * masks[0]
        AH1 = A @ H1
        Z1 = AH1 @ self.W1
        H2 = np.maximum(Z1, 0.0)
        if masks is not None:
            H2 = H2 * masks[1]
        AH2 = A @ H2
        Y = _softmax(AH2 @ self.W2)
        cache = {"A": A, "AX": AX, "Z0": Z0, "AH1": AH1, "Z1": Z1, "AH2": AH2, "Y": Y, "masks": masks}
        return Y, cache

    def loss(self, Y, labels):
        return cross_entropy(Y, labels) + 0.5 * self.hp.l2 * sum(np.sum(W * W) for W in self.weights)

    def gradients(self, cache, labels):
        labels = np.asarray(labels)
        Y = cache["Y"]
        A = cache["A"]
        masks = cache["masks"]
        labeled = labels != 0
        cls = (labels == 1).astype(np.int64)
        d_logits = np.zeros_like(Y)
        rows = np.flatnonzero(labeled)
        picked = Y[rows, cls[rows]]
        active = rows[(picked > PROB_CLAMP) & (picked < 1.0 - PROB_CLAMP)]
        d_logits[active] = Y[active]
        d_logits[active, cls[active]] -= 1.0

        l2 = self.hp.l2
        dW2 = cache["AH2"].T @ d_logits + l2 * self.W2
        dH2 = A.T @ d_logits @ self.W2.T
        if masks is not None:
            dH2 = dH2 * masks[1]
        dZ1 = dH2 * (cache["Z1"] > 0)
        dW1 = cache["AH1"].T @ dZ1 + l2 * self.W1
        dH1 = A.T @ dZ1 @ self.W1.T
        if masks is not None:
            dH1 = dH1 * masks[0]
        dZ0 = dH1 * (cache["Z0"] > 0)
        dW0 = cache["AX"].T @ dZ0 + l2 * self.W0
        return [dW0, dW1, dW2]

    def backward_and_step(self, cache, labels):
        self.optimizer.step(self.gradients(cache, labels))
        return self

    def predict(self, A_hat, X) -> NodePredictions:
        Y, _ = self.forward(A_hat, X, training=False)
        return NodePredictions(Y)

    # checkpoints: JSON of row-major matrices with shape headers

    def to_json(self) -> str:
        return json.dumps({
            "hyperparameters": asdict(self.hp),
            "weights": [{"shape": list(W.shape), "data": W.ravel().tolist()} for W in self.weights],
        })

    @classmethod
    def from_json(cls, text: str) -> "GcnModel":
        blob = json.loads(text)
        hp = GcnHyperParams(**blob["hyperparameters"])
        mats = [np.array(w["data"], dtype=np.float64).reshape(w["shape"]) for w in blob["weights"]]
        model = cls(mats[0].shape[0], hp, mats[2].shape[1])
        for dst, src in zip(model.weights, mats):
            dst[...] = src
        return model


def cross_entropy(Y, labels):
    """Summed cross-entropy over labeled nodes (labels +1/-1; 0 ignored)."""
    labels = np.asarray(labels)
    rows = np.flatnonzero(labels != 0)
    if len(rows) == 0:
        raise ContractError("loss needs at least one labeled node")
    cls = (labels[rows] == 1).astype(np.int64)
    picked = np.clip(Y[rows, cls], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.log(picked).sum())


def forward(model: GcnModel, adjacency, X, training=False, seed=None):
    rng = np.random.default_rng(seed)
    Y, cache = model.forward(adjacency, X, training=training, rng=rng)
    return NodePredictions(Y), cache


def loss(Y, labels, model: GcnModel) -> float:
    Y = Y.proba if isinstance(Y, NodePredictions) else Y
    return model.loss(Y, labels)


def backward_and_step(model: GcnModel, cache, labels) -> GcnModel:
    return model.backward_and_step(cache, labels)


def train_on_stack(stack: DayGraphStack, hp: GcnHyperParams = GcnHyperParams(),
                   supervised: bool = False, history=None):
    """Train a fresh model on days t-4..t-1 then (unless ``supervised``) on day t.

    Each day graph is used for ``hp.epochs_per_graph`` full-batch epochs in
    chronological order. Returns ``(model, predictions for day t)``; when a
    list is passed as ``history`` the per-epoch training loss is appended.
    """
    last = stack.labels[4]
    if not supervised and not np.any(np.asarray(last) != 0):
        raise ContractError("day t has no labeled node in semi-supervised mode")
    model = GcnModel(stack.features[0].shape[1], hp)
    rng = np.random.default_rng([hp.seed, 1])
    days = range(4) if supervised else range(5)
    for d in days:
        X, y = stack.features[d], stack.labels[d]
        for _ in range(hp.epochs_per_graph):
            Y, cache = model.forward(stack.adjacency, X, training=True, rng=rng)
            if history is not None:
                history.append(model.loss(Y, y))
            model.backward_and_step(cache, y)
    return model, model.predict(stack.adjacency, stack.features[4])
