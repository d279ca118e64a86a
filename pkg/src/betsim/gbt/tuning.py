"""K-fold cross-validated grid search."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .boosting import TrainConfig, train_boosted


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"cannot cut {n} rows into {k} folds")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def grid_combinations(grid: dict) -> list[dict]:
    """Cartesian product with parameters sorted by name and values in the given order."""
    if not grid:
        raise ValueError("grid is empty")
    names = sorted(grid)
    for name in names:
        if not list(grid[name]):
            raise ValueError(f"grid entry {name!r} has no values")
    return [dict(zip(names, combo)) for combo in itertools.product(*(list(grid[n]) for n in names))]


@dataclass(frozen=True)
class GridResult:
    params: dict
    mean_accuracy: float
    std_accuracy: float
    fold_accuracies: tuple[float, ...]


def _score(task) -> tuple[float, ...]:
    X, y, folds, config = task
    accs = []
    for i, valid in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        if config.early_stopping_rounds:
            # as in xgboost's own cv: the held-out fold also drives early stopping
            model, _ = train_boosted(X[train], y[train], config, X[valid], y[valid])
        else:
            model, _ = train_boosted(X[train], y[train], config)
        accs.append(float(np.mean(model.predict(X[valid]) == y[valid])))
    return tuple(accs)


def grid_search_cv(X, y, grid: dict, k: int, base: TrainConfig,
                   progress: Optional[Callable[[GridResult], None]] = None,
                   mapper: Callable = map) -> tuple[TrainConfig, list[GridResult]]:
    """Score every combination by mean k-fold validation accuracy.

    Folds are drawn once from ``base.seed`` and shared by all combinations.
    When ``base`` enables early stopping, each fold model stops on its own
    validation fold and is scored at its best round.
    The first combination with the highest mean wins.  ``mapper`` may be a
    process pool's ordered ``imap`` to score combinations concurrently.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    folds = kfold_indices(X.shape[0], k, base.seed)
    combos = grid_combinations(grid)
    tasks = ((X, y, folds, base.with_params(**params)) for params in combos)
    results: list[GridResult] = []
    for params, accs in zip(combos, mapper(_score, tasks)):
        res = GridResult(dict(params), float(np.mean(accs)), float(np.std(accs)), accs)
        results.append(res)
        if progress is not None:
            progress(res)
    best = max(range(len(results)), key=lambda i: (results[i].mean_accuracy, -i))
    return base.with_params(**results[best].params), results
