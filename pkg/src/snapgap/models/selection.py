"""Stratified cross-validated grid search over the three model families.

Hyperparameters win on mean validation Average Precision; ties go to the
simpler candidate (lower C, then fewer and shallower trees). Fold assignment
is seeded and stratified: positives and negatives are shuffled separately and
dealt round-robin, so per-fold class counts differ by at most one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import TooFewPositives, ValidationError
from ..rng import STREAM_FOLDS, derive_rng
from ..metrics import average_precision
from .ensemble import KIND_BOOSTING, KIND_FOREST, EnsembleParams, fit_tree_ensemble
from .logistic import WEIGHTING_BALANCED, fit_logistic
from .matrix import FeatureMatrix

FAMILY_LOGISTIC = "logistic"
FAMILY_FOREST = KIND_FOREST
FAMILY_BOOSTING = KIND_BOOSTING

FAMILIES = (FAMILY_LOGISTIC, FAMILY_FOREST, FAMILY_BOOSTING)

# Unlimited depth is paired with a larger leaf floor to bound tree size.
DEFAULT_GRIDS: dict[str, list[dict]] = {
    FAMILY_LOGISTIC: [{"c": c} for c in (0.01, 0.1, 1.0, 10.0, 100.0)],
    FAMILY_FOREST: [
        {"n_trees": t, "max_depth": d, "min_leaf": 1 if d is not None else 5}
        for t in (100, 300)
        for d in (3, 5, None)
    ],
    FAMILY_BOOSTING: [
        {"n_trees": t, "max_depth": d, "learning_rate": lr}
        for lr in (0.05, 0.1)
        for d in (2, 3)
        for t in (100, 300)
    ],
}


def stratified_folds(y: Sequence[int], folds: int, seed: int) -> list[np.ndarray]:
    """Validation index arrays for k stratified folds.

    Raises TooFewPositives when some fold would hold no positive (or no
    negative), reporting the largest feasible fold count.
    """
    y = np.asarray(y, dtype=int)
    if folds < 2:
        raise ValidationError(f"need at least 2 folds, got {folds}")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    feasible = min(len(pos), len(neg))
    if feasible < folds:
        raise TooFewPositives(
            f"{len(pos)} positives / {len(neg)} negatives cannot fill {folds} folds; "
            f"minimum feasible folds: {feasible}"
        )
    rng = derive_rng(seed, STREAM_FOLDS)
    pos = pos[rng.permutation(len(pos))]
    neg = neg[rng.permutation(len(neg))]
    return [np.sort(np.concatenate([pos[i::folds], neg[i::folds]])) for i in range(folds)]


def fit_family(fm: FeatureMatrix, family: str, params: dict, seed: int):
    """Dispatch one (family, hyperparameters) fit."""
    if family == FAMILY_LOGISTIC:
        return fit_logistic(fm, c=params.get("c", 1.0), weighting=WEIGHTING_BALANCED)
    if family in (FAMILY_FOREST, FAMILY_BOOSTING):
        ep = EnsembleParams(
            kind=family,
            n_trees=params.get("n_trees", 100),
            max_depth=params.get("max_depth"),
            min_leaf=params.get("min_leaf", 1),
            learning_rate=params.get("learning_rate", 0.1),
            max_features=params.get("max_features"),
            class_weighting=WEIGHTING_BALANCED,
            seed=seed,
        )
        return fit_tree_ensemble(fm, ep)
    raise ValidationError(f"unknown model family {family!r}")


def _simplicity_key(family: str, params: dict) -> tuple:
    if family == FAMILY_LOGISTIC:
        return (params["c"],)
    depth = params.get("max_depth")
    depth_rank = np.inf if depth is None else depth
    return (params.get("n_trees", 0), depth_rank, params.get("learning_rate", 0.0))


@dataclass
class GridEntry:
    params: dict
    mean_ap: float
    fold_aps: list[float]


@dataclass
class CvGridResult:
    family: str
    grid: list[GridEntry]
    winner: dict
    folds: int
    oof_proba: np.ndarray = field(repr=False, default=None)  # winner's out-of-fold scores


def out_of_fold_proba(
    fm: FeatureMatrix, family: str, params: dict, fold_idx: list[np.ndarray], seed: int
) -> np.ndarray:
    """Held-out predictions for every row, from per-fold refits."""
    proba = np.empty(fm.n)
    all_idx = np.arange(fm.n)
    for val in fold_idx:
        train = np.setdiff1d(all_idx, val, assume_unique=False)
        model = fit_family(fm.subset(train), family, params, seed)
        proba[val] = model.predict_proba(fm.X[val])
    return proba


def cv_grid_search(
    fm: FeatureMatrix,
    grids: dict[str, list[dict]] | None = None,
    folds: int = 5,
    seed: int = 0,
) -> dict[str, CvGridResult]:
    """Grid search each family with shared stratified folds.

    Candidates are evaluated in simplicity order and replaced only on a
    strictly better mean AP, so exact ties resolve toward the simpler model.
    The winner's out-of-fold probabilities ride along for calibration.
    """
    grids = DEFAULT_GRIDS if grids is None else grids
    fold_idx = stratified_folds(fm.y, folds, seed)
    results: dict[str, CvGridResult] = {}
    for family, candidates in grids.items():
        entries: list[GridEntry] = []
        best_entry: GridEntry | None = None
        ordered = sorted(candidates, key=lambda p: _simplicity_key(family, p))
        for params in ordered:
            fold_aps = []
            all_idx = np.arange(fm.n)
            for val in fold_idx:
                train = np.setdiff1d(all_idx, val)
                model = fit_family(fm.subset(train), family, params, seed)
                scores = model.predict_proba(fm.X[val])
                fold_aps.append(average_precision(scores, fm.y[val]))
            entry = GridEntry(params=params, mean_ap=float(np.mean(fold_aps)), fold_aps=fold_aps)
            entries.append(entry)
            if best_entry is None or entry.mean_ap > best_entry.mean_ap:
                best_entry = entry
        oof = out_of_fold_proba(fm, family, best_entry.params, fold_idx, seed)
        results[family] = CvGridResult(
            family=family,
            grid=entries,
            winner=best_entry.params,
            folds=folds,
            oof_proba=oof,
        )
    return results
