"""Boosted ensembles of second-order logistic trees."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numba
import numpy as np

from ..errors import ConfigError, TrainingError
from .tree import Tree, build_tree, grad_hess_logistic, presort, sigmoid

MODEL_FORMAT = "betsim-gbt"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.3
    max_depth: int = 6
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    n_estimators: int = 1000
    early_stopping_rounds: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("eta", "must be > 0")
        if self.max_depth < 1:
            raise ConfigError("max_depth", "must be >= 1")
        for name in ("subsample", "colsample_bytree"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(name, "must lie in (0, 1]")
        for name in ("gamma", "min_child_weight", "reg_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.n_estimators < 1:
            raise ConfigError("n_estimators", "must be >= 1")
        if self.early_stopping_rounds < 0:
            raise ConfigError("early_stopping_rounds", "must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "lambda" in data:
            data["reg_lambda"] = data.pop("lambda")
        known = {f.name: f.type for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown training parameter")
        ints = {"max_depth", "n_estimators", "early_stopping_rounds", "seed"}
        return cls(**{k: (int(v) if k in ints else float(v)) for k, v in data.items()})

    def with_params(self, **params) -> "TrainConfig":
        return TrainConfig.from_dict({**asdict(self), **params})


def logloss(labels, probs) -> float:
    y = np.asarray(labels, dtype=float)
    p = np.clip(np.asarray(probs, dtype=float), 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@numba.njit(cache=True)
def _predict_flat(X, roots, feature, threshold, left, right, value, base, eta):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        m = base
        for t in range(roots.shape[0]):
            i = roots[t]
            while feature[i] >= 0:
                if X[r, feature[i]] < threshold[i]:
                    i = left[i]
                else:
                    i = right[i]
            m += eta * value[i]
        out[r] = m
    return out


class BoostedModel:
    """Additive logistic model; only ``trees[:best_round + 1]`` take part in prediction."""

    def __init__(self, trees: Sequence[Tree], eta: float, feature_names: Sequence[str],
                 base_margin: float = 0.0, best_round: Optional[int] = None):
        self.trees = tuple(trees)
        self.eta = float(eta)
        self.base_margin = float(base_margin)
        self.feature_names = tuple(feature_names)
        self.best_round = len(self.trees) - 1 if best_round is None else int(best_round)
        if self.best_round >= len(self.trees):
            raise ValueError("best_round beyond the last tree")
        self._flat = self._flatten()

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def retained(self) -> tuple[Tree, ...]:
        return self.trees[: self.best_round + 1]

    def _flatten(self):
        roots, parts, offset = [], [], 0
        for tree in self.retained:
            roots.append(offset)
            shift = np.where(tree.feature >= 0, offset, 0)
            parts.append((tree.feature, tree.threshold, tree.left + shift, tree.right + shift, tree.value))
            offset += tree.n_nodes
        if not parts:
            empty_i, empty_f = np.zeros(0, np.int64), np.zeros(0)
            return np.zeros(0, np.int64), empty_i, empty_f, empty_i, empty_i, empty_f
        cols = [np.concatenate([p[k] for p in parts]) for k in range(5)]
        return (np.asarray(roots, np.int64), cols[0].astype(np.int64), cols[1].astype(float),
                cols[2].astype(np.int64), cols[3].astype(np.int64), cols[4].astype(float))

    def _rows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected rows of {self.n_features} features, got shape {X.shape}")
        return np.ascontiguousarray(X)

    def predict_margin(self, X) -> np.ndarray:
        return _predict_flat(self._rows(X), *self._flat, self.base_margin, self.eta)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.predict_margin(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def feature_scores(self) -> dict[str, int]:
        """Split counts per feature over the retained trees."""
        total = np.zeros(self.n_features, dtype=np.int64)
        for tree in self.retained:
            total += tree.split_counts(self.n_features)
        return {name: int(c) for name, c in zip(self.feature_names, total)}

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_names": list(self.feature_names),
            "eta": self.eta,
            "base_margin": self.base_margin,
            "best_round": self.best_round,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BoostedModel":
        if data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_VERSION:
            raise ValueError("not a betsim model document")
        return cls([Tree.from_dict(t) for t in data["trees"]], data["eta"], data["feature_names"],
                   data["base_margin"], data["best_round"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "BoostedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainingHistory:
    train_logloss: list[float]
    valid_logloss: list[float]
    best_round: int
    stopped_early: bool


def train_boosted(X, y, config: TrainConfig, X_valid=None, y_valid=None,
                  feature_names: Optional[Sequence[str]] = None) -> tuple[BoostedModel, TrainingHistory]:
    """Fit trees round by round.

    Gradients come from every training row, each tree is grown on a
    without-replacement subsample.  With a validation set, training stops
    once its LogLoss has gone ``early_stopping_rounds`` rounds without a new
    minimum, and ``best_round`` is the round of that minimum.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("training set is empty")
    if X.shape[0] != y.shape[0]:
        raise TrainingError("features and labels differ in length")
    if np.unique(y).size < 2:
        raise TrainingError("training set holds a single class")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    has_valid = X_valid is not None
    if has_valid:
        X_valid = np.ascontiguousarray(X_valid, dtype=float)
        y_valid = np.asarray(y_valid, dtype=float)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = X.shape[0]
    n_sub = max(1, int(math.floor(config.subsample * n + 1e-12)))
    margins = np.zeros(n)
    v_margins = np.zeros(X_valid.shape[0]) if has_valid else None
    trees: list[Tree] = []
    train_curve, valid_curve = [], []
    best, best_loss, stopped = 0, np.inf, False
    all_rows = np.arange(n, dtype=np.int64)
    columns = presort(X)

    for r in range(config.n_estimators):
        g, h = grad_hess_logistic(y, margins)
        rows = all_rows if n_sub >= n else np.sort(rng.choice(n, size=n_sub, replace=False))
        tree, _ = build_tree(rows, g, h, X, config, rng, columns)
        trees.append(tree)
        margins = margins + config.eta * tree.predict(X)
        train_curve.append(logloss(y, sigmoid(margins)))
        if not np.all(np.isfinite(margins)):
            raise TrainingError(f"non-finite margins at round {r}")
        if has_valid:
            v_margins = v_margins + config.eta * tree.predict(X_valid)
            loss = logloss(y_valid, sigmoid(v_margins))
            valid_curve.append(loss)
            if loss < best_loss:
                best, best_loss = r, loss
            elif config.early_stopping_rounds and r - best >= config.early_stopping_rounds:
                stopped = True
                break
        else:
            best = r

    model = BoostedModel(trees, config.eta, names, 0.0, best)
    return model, TrainingHistory(train_curve, valid_curve, best, stopped)
