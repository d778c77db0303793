"""Independent brute-force oracles used to verify the package's fast paths.

Everything here is written from the definitions, not from the library code:
quantiles by hand-rolled rank interpolation, OLS by normal equations, AUC by
pairwise comparison, AP by rank enumeration, labeling by explicit sort-and-
threshold, gradients by central differences.
"""
from __future__ import annotations

import math

import numpy as np


def quantile_interp(values, q):
    """Sorted-rank linear interpolation at index h = (n-1) q."""
    xs = sorted(float(v) for v in values)
    n = len(xs)
    h = (n - 1) * q
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return xs[lo]
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def label_oracle(rows, poverty_floor=0.15, hi_q=0.70, lo_q=0.10, by_area=False):
    """Explicit sort-and-threshold labeling.

    `rows` are dicts with keys p, s (capped uptake), area, and optionally
    eligible-blocking fields already resolved: pass p=None or s=None (or
    s<=0, p below floor) for ineligible rows. Returns a list of 1/0/None.
    """

    def eligible(row):
        p, s = row["p"], row["s"]
        if p is None or not math.isfinite(p) or p <= 0 or p < poverty_floor:
            return False
        if s is None or not math.isfinite(s) or s <= 0:
            return False
        return row.get("predictors_present", True)

    elig = [i for i, r in enumerate(rows) if eligible(r)]
    labels: list = [None] * len(rows)
    if not elig:
        return labels
    groups: dict[str, list[int]] = {}
    for i in elig:
        key = rows[i]["area"] if by_area else "All"
        groups.setdefault(key, []).append(i)
    for key, idxs in groups.items():
        tau_hi = quantile_interp([rows[i]["p"] for i in idxs], hi_q)
        tau_lo = quantile_interp([min(rows[i]["s"], 1.0) for i in idxs], lo_q)
        for i in idxs:
            p, s = rows[i]["p"], min(rows[i]["s"], 1.0)
            labels[i] = 1 if (p >= tau_hi and s <= tau_lo) else 0
    return labels


def ols_normal_equations(x, y):
    """Solve the 2x2 normal equations directly."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    A = np.array([[n, x.sum()], [x.sum(), (x * x).sum()]])
    b = np.array([y.sum(), (x * y).sum()])
    alpha, beta = np.linalg.solve(A, b)
    return float(alpha), float(beta)


def fd_gradient(f, theta, eps=1e-6):
    """Central finite-difference gradient of scalar f."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(len(theta)):
        up = theta.copy()
        dn = theta.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (f(up) - f(dn)) / (2 * eps)
    return g


def auc_pairwise(scores, labels):
    """O(n^2) pair enumeration: wins + half-ties over all pos/neg pairs."""
    scores = list(map(float, scores))
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def ap_rank_enum(scores, labels):
    """Rank-by-rank precision sum over positives, stable descending order."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    ap = 0.0
    hits = 0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            ap += hits / rank
    return ap / n_pos


def precision_at_k_oracle(scores, labels, fraction):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    k = math.ceil(fraction * len(scores))
    top = order[:k]
    return sum(labels[i] for i in top) / k


def youden_scan(scores, labels):
    """Best J over every threshold achievable on this data (inclusive >=)."""
    cands = sorted(set(scores))
    cands = [cands[0]] + [(a + b) / 2 for a, b in zip(cands, cands[1:])] + [
        math.nextafter(cands[-1], math.inf)
    ]
    n_pos = sum(1 for l in labels if l == 1)
    n_neg = len(labels) - n_pos
    best = -math.inf
    for t in cands:
        tp = sum(1 for s, l in zip(scores, labels) if l == 1 and s >= t)
        fp = sum(1 for s, l in zip(scores, labels) if l == 0 and s >= t)
        best = max(best, tp / n_pos - fp / n_neg)
    return best


def monotone_sse(fitted, labels):
    return float(np.sum((np.asarray(fitted) - np.asarray(labels)) ** 2))


def pav_perturbations(fitted, eps=1e-3):
    """Monotone neighbors of a fitted vector: single-coordinate and
    contiguous-block moves of +-eps that keep the sequence non-decreasing."""
    fitted = np.asarray(fitted, dtype=float)
    n = len(fitted)
    out = []
    for i in range(n):
        for delta in (-eps, eps):
            cand = fitted.copy()
            cand[i] += delta
            if np.all(np.diff(cand) >= -1e-12):
                out.append(cand)
    for a in range(n):
        for b in range(a + 1, n + 1):
            for delta in (-eps, eps):
                cand = fitted.copy()
                cand[a:b] += delta
                if np.all(np.diff(cand) >= -1e-12):
                    out.append(cand)
    return out


def grid_minimize_2d(objective, center=(0.0, 0.0), half_width=8.0, points=41, rounds=10):
    """Iteratively refined 2-D grid search; a slow, independent minimizer."""
    cx, cy = center
    hw = half_width
    best = (math.inf, cx, cy)
    for _ in range(rounds):
        xs = np.linspace(cx - hw, cx + hw, points)
        ys = np.linspace(cy - hw, cy + hw, points)
        for x in xs:
            for y in ys:
                val = objective(np.array([x, y]))
                if val < best[0]:
                    best = (val, x, y)
        _, cx, cy = best
        hw = hw * 2.2 / (points - 1) * 2  # shrink around the incumbent
    return np.array([best[1], best[2]])
