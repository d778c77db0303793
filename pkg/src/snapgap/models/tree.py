"""Axis-aligned binary decision trees grown by exhaustive greedy search.

One builder serves both ensemble flavors: classification trees split on
weighted Gini and store the weighted positive fraction in each leaf;
regression trees split on weighted squared error and store a caller-supplied
leaf value (the boosting Newton step). Split candidates are midpoints between
adjacent distinct sorted feature values; ties are broken toward the lowest
feature index, then the lowest threshold, so growth is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CRITERION_GINI = "gini"
CRITERION_MSE = "mse"

_NO_SPLIT = (np.inf, -1, np.nan)


@dataclass
class DecisionTree:
    """Flat-array tree; feature[i] == -1 marks a leaf with value[i]."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.nan)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        val = np.asarray(self.value)
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                break
            rows = np.flatnonzero(active)
            go_left = X[rows, f[rows]] <= thr[node[rows]]
            node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
        return val[node]

    def leaf_for(self, X: np.ndarray) -> np.ndarray:
        """Leaf index per row (used by leaf-value assignment in boosting)."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        feat = np.asarray(self.feature)
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                return node
            rows = np.flatnonzero(active)
            go_left = X[rows, f[rows]] <= np.asarray(self.threshold)[node[rows]]
            node[rows] = np.where(
                go_left, np.asarray(self.left)[node[rows]], np.asarray(self.right)[node[rows]]
            )


def _best_split_gini(x, t, w, min_leaf):
    """Minimum weighted child Gini over candidate thresholds of one feature.

    Returns (score, position_threshold) or _NO_SPLIT[:1]-style sentinel.
    t must be 0/1 labels.
    """
    order = np.argsort(x, kind="stable")
    xs, ts, ws = x[order], t[order], w[order]
    n = len(xs)
    cw = np.cumsum(ws)
    cwp = np.cumsum(ws * ts)
    total_w, total_p = cw[-1], cwp[-1]
    idx = np.arange(n - 1)
    valid = (xs[:-1] < xs[1:]) & (idx + 1 >= min_leaf) & (n - idx - 1 >= min_leaf)
    if not valid.any():
        return np.inf, np.nan
    wl = cw[:-1][valid]
    pl = cwp[:-1][valid]
    wr = total_w - wl
    pr = total_p - pl
    # weighted gini: W * (1 - f1^2 - f0^2) = W - (P^2 + (W-P)^2) / W
    gl = wl - (pl**2 + (wl - pl) ** 2) / wl
    gr = wr - (pr**2 + (wr - pr) ** 2) / wr
    score = gl + gr
    best = int(np.argmin(score))  # first minimum -> lowest threshold on ties
    pos = np.flatnonzero(valid)[best]
    thr = (xs[pos] + xs[pos + 1]) / 2.0
    if thr >= xs[pos + 1]:  # fp midpoint collapse between adjacent doubles
        thr = xs[pos]
    return float(score[best]), float(thr)


def _best_split_mse(x, t, w, min_leaf):
    """Minimum weighted SSE over candidate thresholds of one feature."""
    order = np.argsort(x, kind="stable")
    xs, ts, ws = x[order], t[order], w[order]
    n = len(xs)
    cw = np.cumsum(ws)
    cs = np.cumsum(ws * ts)
    cs2 = np.cumsum(ws * ts * ts)
    idx = np.arange(n - 1)
    valid = (xs[:-1] < xs[1:]) & (idx + 1 >= min_leaf) & (n - idx - 1 >= min_leaf)
    if not valid.any():
        return np.inf, np.nan
    wl = cw[:-1][valid]
    sl = cs[:-1][valid]
    s2l = cs2[:-1][valid]
    wr = cw[-1] - wl
    sr = cs[-1] - sl
    s2r = cs2[-1] - s2l
    score = (s2l - sl**2 / wl) + (s2r - sr**2 / wr)
    best = int(np.argmin(score))
    pos = np.flatnonzero(valid)[best]
    thr = (xs[pos] + xs[pos + 1]) / 2.0
    if thr >= xs[pos + 1]:
        thr = xs[pos]
    return float(score[best]), float(thr)


def _node_impurity(t, w, criterion):
    total_w = w.sum()
    if criterion == CRITERION_GINI:
        p = (w * t).sum()
        return total_w - (p**2 + (total_w - p) ** 2) / total_w
    mean = (w * t).sum() / total_w
    return float(np.sum(w * (t - mean) ** 2))


def grow_tree(
    X: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    *,
    criterion: str,
    max_depth: int | None,
    min_leaf: int,
    max_features: int | None,
    rng: np.random.Generator,
    leaf_value=None,
) -> DecisionTree:
    """Grow one tree depth-first (left child before right).

    `leaf_value(idx)` computes a leaf's stored value from the row indices it
    holds; the default is the weighted mean of `targets` (positive fraction
    for 0/1 labels). Feature subsets are drawn per split from `rng`.
    """
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    d = X.shape[1]
    split_fn = _best_split_gini if criterion == CRITERION_GINI else _best_split_mse
    if leaf_value is None:
        def leaf_value(idx):
            return float(np.sum(weights[idx] * targets[idx]) / np.sum(weights[idx]))

    tree = DecisionTree()

    # Explicit preorder stack (left subtree expanded before right) so that
    # unlimited-depth trees cannot hit the interpreter recursion limit and
    # per-split RNG draws happen in a fixed order.
    root_idx = np.arange(X.shape[0])
    stack: list[tuple[np.ndarray, int, int, bool]] = [(root_idx, 0, -1, False)]
    while stack:
        idx, depth, parent_node, is_left = stack.pop()
        node = tree._add_node()
        if parent_node >= 0:
            if is_left:
                tree.left[parent_node] = node
            else:
                tree.right[parent_node] = node

        t, w = targets[idx], weights[idx]
        if (
            (max_depth is not None and depth >= max_depth)
            or len(idx) < 2 * min_leaf
            or np.all(t == t[0])
        ):
            tree.value[node] = leaf_value(idx)
            continue

        if max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        else:
            feats = np.arange(d)

        parent = _node_impurity(t, w, criterion)
        best_score, best_feat, best_thr = np.inf, -1, np.nan
        for j in feats:  # ascending order: lowest feature index wins ties
            score, thr = split_fn(X[idx, j], t, w, min_leaf)
            if score < best_score:
                best_score, best_feat, best_thr = score, int(j), thr
        if best_feat < 0 or not best_score < parent - 1e-12 * max(1.0, abs(parent)):
            tree.value[node] = leaf_value(idx)
            continue

        go_left = X[idx, best_feat] <= best_thr
        tree.feature[node] = best_feat
        tree.threshold[node] = best_thr
        # push right first so the left child is materialized next (preorder)
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))

    return tree
