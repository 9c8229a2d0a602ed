"""Numba kernels for growing and applying regression trees.

Trees are stored as flat parallel arrays (one row per tree when stacked into
a forest). A node with ``feature[node] == -1`` is a leaf.
"""
import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def grow_tree(X, y, presorted, seed, n_sub, max_depth, min_leaf, bootstrap,
              feature, threshold, left, right, value, importance):
    """Grow one tree in place; returns the node count.

    Exact greedy CART on squared error. The bootstrap sample is held as
    per-row multiplicities, so a row drawn twice weighs 2 in every sum; this
    is equivalent to duplicating it. ``presorted`` holds each column's
    ascending row order over the full training set, filtered here to the rows
    actually drawn. ``n_sub`` features are drawn without replacement at each
    node.
    """
    np.random.seed(seed)
    n, d = X.shape
    w = np.zeros(n)
    if bootstrap:
        for i in range(n):
            w[np.random.randint(0, n)] += 1.0
    else:
        w[:] = 1.0

    m_all = 0
    for i in range(n):
        if w[i] > 0:
            m_all += 1
    order = np.empty((d, m_all), dtype=np.int64)
    for f in range(d):
        a = 0
        for p in range(n):
            r = presorted[f, p]
            if w[r] > 0:
                order[f, a] = r
                a += 1

    capacity = feature.shape[0]
    stack_node = np.empty(capacity, dtype=np.int64)
    stack_lo = np.empty(capacity, dtype=np.int64)
    stack_hi = np.empty(capacity, dtype=np.int64)
    stack_depth = np.empty(capacity, dtype=np.int64)
    go_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(m_all, dtype=np.int64)
    perm = np.arange(d)

    n_nodes = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m_all
    stack_depth[0] = 0
    top = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]

        # weighted mean, shifted by the first value so constant nodes are exact
        col0 = order[0]
        base = y[col0[lo]]
        wsum = 0.0
        acc = 0.0
        for p in range(lo, hi):
            r = col0[p]
            wsum += w[r]
            acc += w[r] * (y[r] - base)
        mean = base + acc / wsum
        value[node] = mean
        feature[node] = LEAF
        threshold[node] = 0.0
        left[node] = LEAF
        right[node] = LEAF

        if (max_depth >= 0 and depth >= max_depth) or wsum < 2 * min_leaf:
            continue
        if n_nodes + 2 > capacity:
            continue

        total = 0.0
        sq = 0.0
        for p in range(lo, hi):
            r = col0[p]
            dev = y[r] - mean
            total += w[r] * y[r]
            sq += w[r] * dev * dev
        if sq <= 1e-14:
            continue

        # partial Fisher-Yates draw of candidate features; with every feature a
        # candidate the draw is skipped so the stream does not depend on d
        for j in range(n_sub if n_sub < d else 0):
            k = j + np.random.randint(0, d - j)
            tmp = perm[j]
            perm[j] = perm[k]
            perm[k] = tmp

        best_gain = 0.0
        best_f = -1
        best_pos = -1
        best_thr = 0.0
        parent = total * total / wsum
        for j in range(n_sub):
            f = perm[j]
            col = order[f]
            if X[col[lo], f] == X[col[hi - 1], f]:
                continue
            cum = 0.0
            cw = 0.0
            for p in range(lo, hi - 1):
                r = col[p]
                cum += w[r] * y[r]
                cw += w[r]
                xv = X[r, f]
                xn = X[col[p + 1], f]
                if xv == xn or cw < min_leaf:
                    continue
                rw = wsum - cw
                if rw < min_leaf:
                    break
                rest = total - cum
                gain = cum * cum / cw + rest * rest / rw - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_pos = p
                    best_thr = 0.5 * (xv + xn)
                    # midpoint may round onto the upper value for adjacent floats
                    if best_thr >= xn:
                        best_thr = xv

        if best_f < 0 or best_gain <= 1e-12 * sq:
            continue

        col = order[best_f]
        for p in range(lo, hi):
            go_left[col[p]] = p <= best_pos
        n_left = best_pos - lo + 1
        for f in range(d):
            a = lo
            b = 0
            for p in range(lo, hi):
                s = order[f, p]
                if go_left[s]:
                    order[f, a] = s
                    a += 1
                else:
                    buf[b] = s
                    b += 1
            for q in range(b):
                order[f, a + q] = buf[q]

        importance[best_f] += best_gain
        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc

        # right pushed first so the left subtree is numbered first
        stack_node[top] = rc
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lc
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        stack_depth[top] = depth + 1
        top += 1

    return n_nodes


@njit(cache=True)
def grow_forest(X, y, seeds, n_sub, max_depth, min_leaf, bootstrap,
                feature, threshold, left, right, value, importance, n_nodes):
    d = X.shape[1]
    presorted = np.empty((d, X.shape[0]), dtype=np.int64)
    for f in range(d):
        presorted[f] = np.argsort(X[:, f], kind="mergesort")
    for t in range(seeds.shape[0]):
        n_nodes[t] = grow_tree(X, y, presorted, seeds[t], n_sub, max_depth,
                               min_leaf, bootstrap, feature[t], threshold[t],
                               left[t], right[t], value[t], importance[t])


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right, value, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]


@njit(cache=True)
def predict_forest(X, feature, threshold, left, right, value):
    n = X.shape[0]
    n_trees = feature.shape[0]
    per_tree = np.empty((n_trees, n))
    for t in range(n_trees):
        apply_tree(X, feature[t], threshold[t], left[t], right[t], value[t],
                   per_tree[t])
    out = np.empty(n)
    for i in range(n):
        base = per_tree[0, i]
        acc = 0.0
        for t in range(n_trees):
            acc += per_tree[t, i] - base
        out[i] = base + acc / n_trees
    return out
