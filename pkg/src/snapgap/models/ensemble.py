"""Random forest and gradient boosting built on the CART grower.

All randomness (bootstraps, per-split feature subsets) flows from per-tree
generators derived from the root seed, so tree i is identical no matter how
many trees the ensemble has or in what order they are grown.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import FeatureMismatch, InvalidParams, SingleClass
from ..rng import STREAM_TREE, derive_rng
from .logistic import WEIGHTING_BALANCED, sample_weights, sigmoid
from .matrix import FeatureMatrix
from .tree import CRITERION_GINI, CRITERION_MSE, DecisionTree, grow_tree

KIND_FOREST = "random_forest"
KIND_BOOSTING = "gradient_boosting"


@dataclass(frozen=True)
class EnsembleParams:
    kind: str
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    learning_rate: float = 0.1  # boosting only
    max_features: int | None = None  # None: all (boosting) / sqrt(d) (forest)
    class_weighting: str = WEIGHTING_BALANCED
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in (KIND_FOREST, KIND_BOOSTING):
            raise InvalidParams(f"unknown ensemble kind {self.kind!r}")
        if self.n_trees < 1:
            raise InvalidParams(f"tree count must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise InvalidParams(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_leaf < 1:
            raise InvalidParams(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.kind == KIND_BOOSTING and not 0.0 < self.learning_rate <= 1.0:
            raise InvalidParams(f"learning rate must be in (0,1], got {self.learning_rate}")
        if self.max_features is not None and self.max_features < 1:
            raise InvalidParams(f"max_features must be >= 1 or None, got {self.max_features}")


@dataclass(frozen=True)
class TreeEnsembleModel:
    kind: str
    trees: tuple[DecisionTree, ...]
    params: EnsembleParams
    feature_names: tuple[str, ...]
    base_score: float = 0.0  # boosting log-odds offset

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise FeatureMismatch(
                f"expected {len(self.feature_names)} features, got shape {X.shape}"
            )
        if self.kind == KIND_FOREST:
            acc = np.zeros(X.shape[0])
            for tree in self.trees:
                acc += tree.predict(X)
            return acc / len(self.trees)
        score = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            score += self.params.learning_rate * tree.predict(X)
        return sigmoid(score)


def _resolve_max_features(params: EnsembleParams, d: int) -> int | None:
    if params.max_features is not None:
        return min(params.max_features, d)
    if params.kind == KIND_FOREST:
        return max(1, int(math.sqrt(d)))
    return None  # boosting uses all features by default


def fit_tree_ensemble(fm: FeatureMatrix, params: EnsembleParams) -> TreeEnsembleModel:
    """Fit a forest (bootstrapped Gini trees) or boosting (stagewise Newton)."""
    params.validate()
    if len(np.unique(fm.y)) < 2:
        raise SingleClass("both classes required to fit")
    X, y = fm.X, fm.y.astype(float)
    n, d = fm.n, fm.d
    w = sample_weights(fm.y, params.class_weighting)
    max_features = _resolve_max_features(params, d)

    if params.kind == KIND_FOREST:
        trees = []
        for i in range(params.n_trees):
            rng = derive_rng(params.seed, STREAM_TREE, i)
            boot = rng.integers(0, n, size=n)
            trees.append(
                grow_tree(
                    X[boot],
                    y[boot],
                    w[boot],
                    criterion=CRITERION_GINI,
                    max_depth=params.max_depth,
                    min_leaf=params.min_leaf,
                    max_features=max_features,
                    rng=rng,
                )
            )
        return TreeEnsembleModel(
            kind=KIND_FOREST, trees=tuple(trees), params=params, feature_names=fm.feature_names
        )

    # gradient boosting on the log-loss: trees fit the residual y - p, leaves
    # take the Newton step sum(w*r) / sum(w*p*(1-p))
    p_base = float(np.sum(w * y) / np.sum(w))
    p_base = min(max(p_base, 1e-12), 1.0 - 1e-12)
    base = math.log(p_base / (1.0 - p_base))
    score = np.full(n, base)
    trees = []
    for m in range(params.n_trees):
        rng = derive_rng(params.seed, STREAM_TREE, m)
        p = sigmoid(score)
        residual = y - p
        curvature = np.maximum(p * (1.0 - p), 1e-12)
        tree = grow_tree(
            X,
            residual,
            w,
            criterion=CRITERION_MSE,
            max_depth=params.max_depth,
            min_leaf=params.min_leaf,
            max_features=max_features,
            rng=rng,
        )
        leaves = tree.leaf_for(X)
        for leaf in np.unique(leaves):
            rows = leaves == leaf
            num = float(np.sum(w[rows] * residual[rows]))
            den = float(np.sum(w[rows] * curvature[rows]))
            tree.value[leaf] = num / den
        score += params.learning_rate * tree.predict(X)
        trees.append(tree)
    return TreeEnsembleModel(
        kind=KIND_BOOSTING,
        trees=tuple(trees),
        params=params,
        feature_names=fm.feature_names,
        base_score=base,
    )
