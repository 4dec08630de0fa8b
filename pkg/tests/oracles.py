"""Independent reference computations shared by the module and acceptance tests."""

import itertools
import math

import numpy as np

from gcnet.gcn import GcnHyperParams, GcnModel

# one "criterion N: PASS|FAIL ..." line per acceptance check, echoed in the pytest summary
ACCEPTANCE = []


def report(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def dense_normalized(A):
    A_tilde = np.asarray(A, float) + np.eye(len(A))
    D = np.diag(A_tilde.sum(axis=1) ** -0.5)
    return D @ A_tilde @ D


def random_connected_weights(rng, m, p=0.4, low=0.05, high=1.0):
    """Symmetric weight matrix of a random connected graph (a random spanning tree plus extras)."""
    A = np.zeros((m, m))
    order = rng.permutation(m)
    for k in range(1, m):
        i, j = order[k], order[rng.integers(k)]
        A[i, j] = A[j, i] = rng.uniform(low, high)
    extra = np.triu(rng.random((m, m)) < p, 1)
    W = np.triu(rng.uniform(low, high, (m, m)), 1)
    A = np.triu(A, 1)
    A = np.where(extra & (A == 0), W, A)
    return A + A.T


def edges_of(A):
    m = len(A)
    return {(i, j): float(A[i, j]) for i in range(m) for j in range(i + 1, m) if A[i, j] > 0}


def connected(m, edges):
    """Depth-first search connectivity."""
    if m <= 1:
        return True
    nbrs = {k: set() for k in range(m)}
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    seen, stack = {0}, [0]
    while stack:
        for b in nbrs[stack.pop()] - seen:
            seen.add(b)
            stack.append(b)
    return len(seen) == m


def clustering_triple_loop(A, node):
    """Weighted local clustering coefficient by explicit enumeration of ordered neighbour pairs."""
    top = A.max()
    W = A / top
    nbrs = [k for k in range(len(A)) if A[node, k] > 0]
    deg = len(nbrs)
    if deg <= 1:
        return 0.0
    total = 0.0
    for j, k in itertools.permutations(nbrs, 2):
        total += (W[node, j] * W[node, k] * W[j, k]) ** (1.0 / 3.0)
    return total / (deg * (deg - 1))


def confusion(pred, actual):
    tp = fp = tn = fn = 0
    for p, a in zip(pred, actual):
        if p == 1 and a == 1:
            tp += 1
        elif p == 1:
            fp += 1
        elif a == -1:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def mcc_by_hand(tp, fp, tn, fn):
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if denom == 0 else (tp * tn - fp * fn) / math.sqrt(denom)


def gcn_gradient_error(seed, m=6, f=11, h=1e-5, dropout=0.5, l2=5e-4):
    """Max relative error between analytic and central-difference gradients on a random graph."""
    rng = np.random.default_rng(seed)
    A_hat = dense_normalized(random_connected_weights(rng, m))
    X = rng.normal(size=(m, f))
    labels = rng.choice([-1, 0, 1], size=m)
    labels[0] = 1
    model = GcnModel(f, GcnHyperParams(dropout=dropout, l2=l2, seed=seed))
    keep = 1.0 - dropout
    masks = tuple((rng.random((m, model.hp.hidden)) < keep) / keep for _ in range(2))
    _, cache = model.forward(A_hat, X, training=True, masks=masks)
    analytic = model.gradients(cache, labels)

    def objective():
        Y, _ = model.forward(A_hat, X, training=True, masks=masks)
        return model.loss(Y, labels)

    worst = 0.0
    for W, G in zip(model.weights, analytic):
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + h
            up = objective()
            W[idx] = old - h
            down = objective()
            W[idx] = old
            numeric = (up - down) / (2 * h)
            scale = max(abs(numeric), abs(G[idx]), 1e-6)
            worst = max(worst, abs(numeric - G[idx]) / scale)
    return worst
