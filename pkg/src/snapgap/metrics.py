"""Evaluation suite: ROC AUC, Average Precision, rule-based confusion
metrics, precision among the top-ranked fraction, and permutation importance.

Rank metrics order rows by score descending with a stable sort, so exact
score ties resolve toward the earlier input index; that convention is shared
with the brute-force oracles in the test suite. All functions are pure.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .calibration import DecisionRule, classify, rule_to_dict
from .errors import EmptyInput, FeatureMismatch, NoPositives, SingleClass, ValidationError
from .rng import STREAM_PERMUTE, derive_rng

METRIC_AUC = "auc"
METRIC_AP = "ap"


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be equal-length 1-D sequences")
    return s, y


def _average_ranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    n = len(s)
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + 1 + ends) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative, ties count half."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = _average_ranks(s)
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-interpolated AP: sum over positives of precision at their rank."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise NoPositives("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    k = np.arange(1, len(s) + 1)
    return float(np.sum((tp / k) * y_sorted) / n_pos)


@dataclass(frozen=True)
class ConfusionMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    n_flagged: int
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_at(
    probabilities: Sequence[float], labels: Sequence[int], rule: DecisionRule
) -> ConfusionMetrics:
    """Confusion arithmetic at a decision rule; precision is reported as 0
    (with a warning) when nothing is flagged."""
    p, y = _as_arrays(probabilities, labels)
    pred = classify(p, rule)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    flagged = tp + fp
    if flagged == 0:
        warnings.warn("decision rule flags nothing; precision reported as 0")
        precision = 0.0
    else:
        precision = tp / flagged
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    accuracy = (tp + tn) / len(y)
    return ConfusionMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        n_flagged=flagged,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def precision_at_k(scores: Sequence[float], labels: Sequence[int], fraction: float) -> float:
    """Precision among the top ceil(fraction * n) rows by score.

    Boundary ties resolve by the stable descending order (lowest input index
    first), so the selected set is deterministic.
    """
    s, y = _as_arrays(scores, labels)
    if s.size == 0:
        raise EmptyInput("precision@K of empty cohort")
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0,1], got {fraction}")
    k = math.ceil(fraction * s.size)
    order = np.argsort(-s, kind="stable")
    top = y[order[:k]]
    return float(top.sum() / k)


@dataclass(frozen=True)
class FeatureImportance:
    name: str
    delta_auc: float
    delta_ap: float
    repeats: int
    dispersion: float  # std of the primary-metric deltas across repeats


@dataclass(frozen=True)
class ImportanceReport:
    metric: str  # primary metric used for ranking/dispersion
    baseline_auc: float
    baseline_ap: float
    features: tuple[FeatureImportance, ...]

    def ranked(self) -> list[FeatureImportance]:
        key = (lambda f: f.delta_auc) if self.metric == METRIC_AUC else (lambda f: f.delta_ap)
        return sorted(self.features, key=key, reverse=True)


def permutation_importance(
    model,
    X: np.ndarray,
    labels: Sequence[int],
    metric: str = METRIC_AUC,
    repeats: int = 10,
    seed: int = 0,
) -> ImportanceReport:
    """Mean metric drop when one predictor column is shuffled.

    Each (feature, repeat) pair draws its permutation from its own seeded
    stream, so results do not depend on evaluation order.
    """
    if metric not in (METRIC_AUC, METRIC_AP):
        raise ValidationError(f"metric must be 'auc' or 'ap', got {metric!r}")
    if repeats < 1:
        raise ValidationError(f"repeats must be >= 1, got {repeats}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=int)
    names = tuple(model.feature_names)
    if X.ndim != 2 or X.shape[1] != len(names):
        raise FeatureMismatch(f"expected {len(names)} features, got shape {X.shape}")

    base_scores = model.predict_proba(X)
    baseline_auc = roc_auc(base_scores, y)
    baseline_ap = average_precision(base_scores, y)

    results = []
    for j, name in enumerate(names):
        d_auc, d_ap = [], []
        for r in range(repeats):
            rng = derive_rng(seed, STREAM_PERMUTE, j, r)
            perm = rng.permutation(X.shape[0])
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            scores = model.predict_proba(Xp)
            d_auc.append(baseline_auc - roc_auc(scores, y))
            d_ap.append(baseline_ap - average_precision(scores, y))
        primary = d_auc if metric == METRIC_AUC else d_ap
        results.append(
            FeatureImportance(
                name=name,
                delta_auc=float(np.mean(d_auc)),
                delta_ap=float(np.mean(d_ap)),
                repeats=repeats,
                dispersion=float(np.std(primary)),
            )
        )
    return ImportanceReport(
        metric=metric,
        baseline_auc=baseline_auc,
        baseline_ap=baseline_ap,
        features=tuple(results),
    )


PRECISION_AT_FRACTIONS = (0.01, 0.05)


@dataclass(frozen=True)
class EvalReport:
    """Full metric suite for one (model, cohort) pair."""

    cohort: str
    model: str
    auc: float
    ap: float
    precision: float
    recall: float
    f1: float
    accuracy: float
    precision_at: dict[float, float]
    n: int
    n_pos: int
    rule: DecisionRule
    n_flagged: int = 0

    def to_dict(self) -> dict:
        return {
            "cohort": self.cohort,
            "model": self.model,
            "auc": self.auc,
            "ap": self.ap,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "precision_at": {str(k): v for k, v in sorted(self.precision_at.items())},
            "n": self.n,
            "n_pos": self.n_pos,
            "n_flagged": self.n_flagged,
            "rule": rule_to_dict(self.rule),
        }


def evaluate(
    probabilities: Sequence[float],
    labels: Sequence[int],
    rule: DecisionRule,
    cohort: str,
    model: str = "",
    fractions: tuple[float, ...] = PRECISION_AT_FRACTIONS,
) -> EvalReport:
    """Assemble the full suite for one cohort at one decision rule."""
    p, y = _as_arrays(probabilities, labels)
    conf = confusion_at(p, y, rule)
    return EvalReport(
        cohort=cohort,
        model=model,
        auc=roc_auc(p, y),
        ap=average_precision(p, y),
        precision=conf.precision,
        recall=conf.recall,
        f1=conf.f1,
        accuracy=conf.accuracy,
        precision_at={f: precision_at_k(p, y, f) for f in fractions},
        n=len(y),
        n_pos=int(np.sum(y == 1)),
        rule=rule,
        n_flagged=conf.n_flagged,
    )
