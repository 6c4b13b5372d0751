"""Shared types for the classical learners: feature matrices, configs, scaling."""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ConfigurationError, PreconditionError

FAMILIES = ("knn", "linear_svc", "decision_tree", "random_forest", "gradient_boost", "mlp")

# recognised keys and their defaults, per family
DEFAULTS: dict[str, dict[str, Any]] = {
    "knn": {"n_neighbors": 5, "weights": "uniform", "p": 2},
    "linear_svc": {"loss": "squared_hinge", "C": 1.0, "penalty": "l2", "max_iter": 1000},
    "decision_tree": {"criterion": "gini", "max_depth": None, "splitter": "best"},
    "random_forest": {"n_estimators": 100, "criterion": "gini", "max_depth": None},
    "gradient_boost": {"n_estimators": 100, "max_depth": 6, "objective": "multi:softprob",
                       "learning_rate": 0.3},
    "mlp": {"hidden_layer_sizes": (100,), "activation": "relu", "max_iter": 200,
            "learning_rate_init": 1e-3, "batch_size": 200},
}

_CHOICES = {
    ("knn", "weights"): ("uniform", "distance"),
    ("knn", "p"): (1, 2),
    ("linear_svc", "loss"): ("hinge", "squared_hinge"),
    ("linear_svc", "penalty"): ("l2",),
    ("decision_tree", "criterion"): ("gini", "entropy", "log_loss"),
    ("decision_tree", "splitter"): ("best",),
    ("random_forest", "criterion"): ("gini", "entropy", "log_loss"),
    ("gradient_boost", "objective"): ("multi:softmax", "multi:softprob"),
    ("mlp", "activation"): ("relu", "tanh"),
}


@dataclass
class FeatureMatrix:
    values: np.ndarray  # rows x dim
    labels: np.ndarray  # rows, ints in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2:
            raise PreconditionError(f"feature values must be 2-D, got {self.values.shape}")
        if len(self.labels) != len(self.values):
            raise PreconditionError("labels length must equal the number of rows")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise PreconditionError(f"labels must lie in [0, {self.num_classes})")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.values[idx], self.labels[idx], self.num_classes)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return "(" + ", ".join(str(x) for x in v) + ",)" if len(v) == 1 else str(v)
    return str(v)


@dataclass
class ClassifierConfig:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown classifier family {self.family!r}")
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise ConfigurationError(
                f"{self.family} does not recognise {sorted(unknown)}; "
                f"known keys: {sorted(DEFAULTS[self.family])}")
        for key, value in self.params.items():
            allowed = _CHOICES.get((self.family, key))
            if allowed is not None and value not in allowed:
                raise ConfigurationError(f"{self.family}.{key} must be one of {allowed}, got {value!r}")

    def resolved(self) -> dict:
        """Family defaults overlaid with the explicit params."""
        return {**DEFAULTS[self.family], **self.params}

    def params_string(self) -> str:
        if not self.params:
            return "default"
        return ";".join(f"{k}={_format_value(v)}" for k, v in self.params.items())

    @classmethod
    def parse(cls, family: str, text: str) -> "ClassifierConfig":
        """Inverse of ``params_string``: ``"default"`` or ``k=v;k=v`` pairs."""
        text = text.strip()
        params = {}
        if text and text != "default":
            for part in text.split(";"):
                if "=" not in part:
                    raise ConfigurationError(f"expected key=value, got {part!r}")
                k, v = (s.strip() for s in part.split("=", 1))
                params[k] = _parse_value(v)
        return cls(family, params)


def _parse_value(text: str):
    if text == "None":
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


class Standardizer:
    """Per-dimension zero mean, unit variance; constant columns are only centred."""

    def fit(self, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean_) / self.scale_


def check_fit_input(train: FeatureMatrix) -> None:
    if train.rows < 1:
        raise PreconditionError("training set is empty")
