"""Gradient-boosted decision trees for binary logistic classification."""
from .boosting import BoostedModel, TrainConfig, TrainingHistory, logloss, train_boosted
from .metrics import ClassScores, MetricsReport, evaluate_classifier, report_from_confusion
from .tree import SplitCandidate, Tree, build_tree, find_best_split, grad_hess_logistic, sigmoid
from .tuning import GridResult, grid_combinations, grid_search_cv, kfold_indices

__all__ = [
    "BoostedModel", "TrainConfig", "TrainingHistory", "logloss", "train_boosted",
    "ClassScores", "MetricsReport", "evaluate_classifier", "report_from_confusion",
    "SplitCandidate", "Tree", "build_tree", "find_best_split", "grad_hess_logistic", "sigmoid",
    "GridResult", "grid_combinations", "grid_search_cv", "kfold_indices",
]
