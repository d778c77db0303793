"""Classifier families, standardization, and cross-validated selection."""

from .ensemble import (
    KIND_BOOSTING,
    KIND_FOREST,
    EnsembleParams,
    TreeEnsembleModel,
    fit_tree_ensemble,
)
from .io import (
    MODEL_FORMAT,
    CalibratedScorer,
    load_json,
    model_from_dict,
    model_to_dict,
    save_json,
    scorer_from_dict,
    scorer_to_dict,
)
from .logistic import (
    WEIGHTING_BALANCED,
    WEIGHTING_NONE,
    LogisticModel,
    fit_logistic,
    penalized_loss_grad,
    sample_weights,
    sigmoid,
)
from .matrix import FeatureMatrix, Standardization, standardize
from .selection import (
    DEFAULT_GRIDS,
    FAMILIES,
    FAMILY_BOOSTING,
    FAMILY_FOREST,
    FAMILY_LOGISTIC,
    CvGridResult,
    GridEntry,
    cv_grid_search,
    fit_family,
    out_of_fold_proba,
    stratified_folds,
)
from .tree import DecisionTree, grow_tree

__all__ = [
    "CalibratedScorer",
    "CvGridResult",
    "DecisionTree",
    "DEFAULT_GRIDS",
    "EnsembleParams",
    "FAMILIES",
    "FAMILY_BOOSTING",
    "FAMILY_FOREST",
    "FAMILY_LOGISTIC",
    "FeatureMatrix",
    "GridEntry",
    "KIND_BOOSTING",
    "KIND_FOREST",
    "LogisticModel",
    "MODEL_FORMAT",
    "Standardization",
    "TreeEnsembleModel",
    "WEIGHTING_BALANCED",
    "WEIGHTING_NONE",
    "cv_grid_search",
    "fit_family",
    "fit_logistic",
    "fit_tree_ensemble",
    "grow_tree",
    "load_json",
    "model_from_dict",
    "model_to_dict",
    "out_of_fold_proba",
    "penalized_loss_grad",
    "sample_weights",
    "save_json",
    "scorer_from_dict",
    "scorer_to_dict",
    "sigmoid",
    "standardize",
    "stratified_folds",
]
