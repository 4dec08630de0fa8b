"""Compiled CART (Gini, binary classes) used by the decision tree and the forest.

Trees are stored as flat arrays indexed by node id: ``feature`` (-1 for a
leaf), ``threshold`` (go left when ``x <= threshold``), ``left``/``right``
child ids and ``prob`` (weighted share of class 1 in the node).
"""

import numpy as np
from numba import njit


def max_nodes(depth):
    return 2 ** (depth + 1) - 1


@njit(cache=True)
def _grow(X, y, weights, max_depth, min_leaf, n_try, shuffle, feature, threshold, left, right, prob):
    n, f = X.shape
    samples = np.empty(n, np.int64)
    n_in = 0
    for s in range(n):
        if weights[s] > 0:
            samples[n_in] = s
            n_in += 1
    cap = feature.shape[0]
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0], st_start[0], st_end[0], st_depth[0] = 0, 0, n_in, 0
    top = 1
    n_nodes = 1
    order_buf = np.arange(f)
    while top > 0:
        top -= 1
        node, start, end, depth = st_node[top], st_start[top], st_end[top], st_depth[top]
        w_tot = 0.0
        w_pos = 0.0
        for q in range(start, end):
            s = samples[q]
            w_tot += weights[s]
            w_pos += weights[s] * y[s]
        prob[node] = w_pos / w_tot if w_tot > 0 else 0.0
        feature[node] = -1
        left[node] = -1
        right[node] = -1
        if depth >= max_depth or w_pos == 0.0 or w_pos == w_tot or w_tot < 2 * min_leaf:
            continue
        parent = 2.0 * w_pos * (w_tot - w_pos) / w_tot
        best = parent - 1e-12
        best_j = -1
        best_thr = 0.0
        if shuffle:
            order = np.random.permutation(f)
        else:
            order = order_buf
        count = end - start
        vals = np.empty(count)
        for t in range(n_try):
            j = order[t]
            for q in range(count):
                vals[q] = X[samples[start + q], j]
            idx = np.argsort(vals, kind="mergesort")
            wl = 0.0
            pl = 0.0
            for q in range(count - 1):
                s = samples[start + idx[q]]
                wl += weights[s]
                pl += weights[s] * y[s]
                v0 = vals[idx[q]]
                v1 = vals[idx[q + 1]]
                if v0 == v1:
                    continue
                wr = w_tot - wl
                if wl < min_leaf or wr < min_leaf:
                    continue
                pr = w_pos - pl
                score = 2.0 * pl * (wl - pl) / wl + 2.0 * pr * (wr - pr) / wr
                if score < best:
                    best = score
                    best_j = j
                    best_thr = 0.5 * (v0 + v1)
                    if best_thr >= v1:
                        best_thr = v0
        if best_j < 0:
            continue
        # in-place partition of samples[start:end]
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[samples[lo], best_j] <= best_thr:
                lo += 1
            else:
                tmp = samples[lo]
                samples[lo] = samples[hi]
                samples[hi] = tmp
                hi -= 1
        feature[node] = best_j
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = n_nodes + 1, lo, end, depth + 1
        top += 1
        st_node[top], st_start[top], st_end[top], st_depth[top] = n_nodes, start, lo, depth + 1
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True)
def grow_tree(X, y, max_depth, min_leaf):
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    prob = np.zeros(cap)
    weights = np.ones(X.shape[0])
    _grow(X, y, weights, max_depth, min_leaf, X.shape[1], False, feature, threshold, left, right, prob)
    return feature, threshold, left, right, prob


@njit(cache=True)
def grow_forest(X, y, n_trees, max_depth, min_leaf, n_try, seed):
    np.random.seed(seed)
    n = X.shape[0]
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full((n_trees, cap), -1, np.int64)
    threshold = np.zeros((n_trees, cap))
    left = np.full((n_trees, cap), -1, np.int64)
    right = np.full((n_trees, cap), -1, np.int64)
    prob = np.zeros((n_trees, cap))
    for t in range(n_trees):
        weights = np.zeros(n)
        for _ in range(n):
            weights[np.random.randint(0, n)] += 1.0
        _grow(X, y, weights, max_depth, min_leaf, n_try, True,
              feature[t], threshold[t], left[t], right[t], prob[t])
    return feature, threshold, left, right, prob


@njit(cache=True)
def predict_proba(X, feature, threshold, left, right, prob):
    """Mean class-1 probability over a stack of trees (2-D arrays, one row per tree)."""
    n = X.shape[0]
    n_trees = feature.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += prob[t, node]
        out[i] = acc / n_trees
    return out
