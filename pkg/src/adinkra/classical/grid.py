"""Configuration grid runner and the learning-type comparison grid."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import AdinkraError, ConfigurationError, InputError
from .base import ClassifierConfig, FeatureMatrix, Standardizer
from .boost import GradientBoosting
from .knn import KNNClassifier
from .mlp import MLPClassifier
from .svm import LinearSVC
from .tree import DecisionTree, RandomForest

log = logging.getLogger(__name__)

SCALED_FAMILIES = {"knn", "linear_svc", "mlp"}


def _rows(family: str, *param_sets: dict) -> list[ClassifierConfig]:
    return [ClassifierConfig(family, p) for p in param_sets]


def paper_grid() -> list[ClassifierConfig]:
    """Every classical row of the comparison table, in table order; ``{}`` is the default row."""
    return (
        _rows("knn", {},
              {"n_neighbors": 5, "weights": "uniform", "p": 1},
              {"n_neighbors": 10, "weights": "distance", "p": 2},
              {"n_neighbors": 5, "weights": "distance", "p": 2})
        + _rows("linear_svc", {},
                *({"loss": loss, "C": 1.0, "penalty": "l2", "max_iter": it}
                  for loss, it in [("squared_hinge", 500), ("squared_hinge", 100),
                                   ("hinge", 1000), ("hinge", 500), ("hinge", 100)]))
        + _rows("random_forest", {},
                *({"n_estimators": n, "criterion": c, "max_depth": d}
                  for c in ("gini", "entropy", "log_loss")
                  for n, d in ([(750, 50), (1000, 100)] if c == "gini"
                               else [(100, None), (750, 50), (1000, 100)])))
        + _rows("decision_tree", {},
                {"criterion": "entropy", "max_depth": 10, "splitter": "best"},
                {"criterion": "entropy", "max_depth": 50, "splitter": "best"})
        + _rows("gradient_boost", {},
                *({"n_estimators": n, "max_depth": d, "objective": o}
                  for n, d, o in [(300, 6, "multi:softmax"), (300, 12, "multi:softmax"),
                                  (100, 6, "multi:softprob"), (300, 6, "multi:softprob"),
                                  (100, 12, "multi:softprob"), (300, 12, "multi:softprob")]))
        + _rows("mlp", {},
                *({"hidden_layer_sizes": (h,), "activation": a, "max_iter": 200}
                  for a in ("relu", "tanh") for h in ((128, 256, 512) if a == "relu"
                                                      else (100, 128, 256, 512))))
    )


def build_classifier(cfg: ClassifierConfig, seed: int = 0):
    p = cfg.resolved()
    f = cfg.family
    if f == "knn":
        return KNNClassifier(p["n_neighbors"], p["weights"], p["p"])
    if f == "linear_svc":
        return LinearSVC(p["loss"], p["C"], p["penalty"], p["max_iter"])
    if f == "decision_tree":
        return DecisionTree(p["criterion"], p["max_depth"], p["splitter"])
    if f == "random_forest":
        return RandomForest(p["n_estimators"], p["criterion"], p["max_depth"], seed=seed)
    if f == "gradient_boost":
        return GradientBoosting(p["n_estimators"], p["max_depth"], p["objective"],
                                p["learning_rate"])
    return MLPClassifier(p["hidden_layer_sizes"], p["activation"], p["max_iter"],
                         p["learning_rate_init"], p["batch_size"], seed=seed)


def _training_key(cfg: ClassifierConfig) -> tuple:
    # configurations that provably fit the same model share one set of runs:
    # the boosting objective only changes what predict exposes, and log_loss
    # is the entropy criterion under another name
    p = cfg.resolved()
    if cfg.family == "gradient_boost":
        p.pop("objective")
    if p.get("criterion") == "log_loss":
        p["criterion"] = "entropy"
    return cfg.family, tuple(sorted((k, repr(v)) for k, v in p.items()))


@dataclass
class GridResult:
    config: ClassifierConfig
    accuracies: list[float] = field(default_factory=list)
    seconds: float = 0.0
    error: Optional[str] = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies and self.error is None else float("nan")


def run_grid(train: FeatureMatrix, test: FeatureMatrix, grid: Sequence[ClassifierConfig],
             runs: int = 5, seed: int = 0) -> list[GridResult]:
    """Train every configuration ``runs`` times on reshuffled training rows.

    Run r shuffles the training rows with seed ``(seed, r)`` and seeds the
    learner with ``seed * 1000 + r``. Distance and margin based learners see
    features standardised with train statistics; trees see raw values. A
    configuration that raises is reported with its error and the grid carries on.
    """
    if train.dim != test.dim:
        raise ConfigurationError(f"train dim {train.dim} != test dim {test.dim}")
    scaler = Standardizer().fit(train.values)
    scaled_train = FeatureMatrix(scaler.transform(train.values), train.labels, train.num_classes)
    scaled_test = scaler.transform(test.values)
    perms = [np.random.default_rng([seed, r]).permutation(train.rows) for r in range(runs)]
    cache: dict[tuple, list[float]] = {}
    results = []
    for cfg in grid:
        res = GridResult(cfg)
        t0 = time.perf_counter()
        key = _training_key(cfg)
        try:
            if key in cache:
                res.accuracies = list(cache[key])
            else:
                tr, te = (scaled_train, scaled_test) if cfg.family in SCALED_FAMILIES \
                    else (train, test.values)
                for r in range(runs):
                    model = build_classifier(cfg, seed=seed * 1000 + r).fit(tr.take(perms[r]))
                    res.accuracies.append(float(np.mean(model.predict(te) == test.labels)))
                cache[key] = list(res.accuracies)
        except (AdinkraError, ValueError, ArithmeticError, MemoryError) as exc:
            res.error = f"{type(exc).__name__}: {exc}"
            log.warning("grid entry %s %s failed: %s", cfg.family, cfg.params_string(), res.error)
        res.seconds = time.perf_counter() - t0
        log.info("%s %s: mean accuracy %.4f (%.1fs)", cfg.family, cfg.params_string(),
                 res.mean_accuracy, res.seconds)
        results.append(res)
    return results


def _atomic_write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def mean_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".mean_accuracy.csv")


def write_results(results: Sequence[GridResult], path) -> tuple[Path, Path]:
    """Per-run CSV ``family,params,run,accuracy`` plus ``<stem>.mean_accuracy.csv``.

    Failed configurations get one row with an empty run and the error text in
    place of the accuracy.
    """
    path = Path(path)
    rows, means = [], []
    for res in results:
        params = res.config.params_string()
        if res.error is not None:
            rows.append([res.config.family, params, "", f"error: {res.error}"])
            means.append([res.config.family, params, f"error: {res.error}"])
            continue
        rows.extend([res.config.family, params, r, f"{a:.6f}"] for r, a in enumerate(res.accuracies))
        means.append([res.config.family, params, f"{res.mean_accuracy:.6f}"])
    _atomic_write_rows(path, ["family", "params", "run", "accuracy"], rows)
    mp = mean_path(path)
    _atomic_write_rows(mp, ["family", "params", "mean_accuracy"], means)
    return path, mp


def read_grid(path) -> list[ClassifierConfig]:
    """Grid file: CSV with a ``family,params`` header, params as in the results table."""
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"family", "params"} <= set(reader.fieldnames):
                raise ConfigurationError(f"{path}: grid file needs 'family' and 'params' columns")
            return [ClassifierConfig.parse(r["family"].strip(), r["params"] or "default")
                    for r in reader]
    except OSError as exc:
        raise InputError(f"cannot read grid file {path}: {exc}") from exc
