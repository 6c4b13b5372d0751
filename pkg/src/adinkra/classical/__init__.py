"""Classical learners trained on CNN features or raw pixels."""

from .base import DEFAULTS, FAMILIES, ClassifierConfig, FeatureMatrix, Standardizer
from .boost import GradientBoosting
from .features import read_features, write_features
from .grid import GridResult, build_classifier, paper_grid, read_grid, run_grid, write_results
from .knn import KNNClassifier, knn_classify
from .mlp import MLPClassifier
from .svm import LinearSVC
from .tree import DecisionTree, RandomForest

__all__ = [
    "DEFAULTS", "FAMILIES", "ClassifierConfig", "DecisionTree", "FeatureMatrix", "GradientBoosting",
    "GridResult", "KNNClassifier", "LinearSVC", "MLPClassifier", "RandomForest", "Standardizer",
    "build_classifier", "knn_classify", "paper_grid", "read_features", "read_grid", "run_grid",
    "write_features", "write_results",
]
