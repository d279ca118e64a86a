"""Regression trees fitted to second-order logistic statistics.

Split gain for a parent with gradient/hessian sums ``(G, H)`` cut into
``(GL, HL)`` and ``(GR, HR)``::

    gain = 0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma

and a leaf's weight is ``-G/(H+lam)``.  Split search is exact and greedy:
every midpoint between consecutive distinct values of every candidate
feature is scored.  Rows with ``x < threshold`` go left, so ties go right.
Gains within a relative ``1e-12`` of each other count as tied, so rounding
noise cannot override the tie rule (lower feature, then lower threshold).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np


def sigmoid(margin):
    m = np.asarray(margin, dtype=float)
    e = np.exp(-np.abs(m))
    return np.where(m >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def grad_hess_logistic(labels, margins) -> tuple[np.ndarray, np.ndarray]:
    """Per-row gradient ``p - y`` and hessian ``p(1-p)`` of the logistic loss."""
    p = sigmoid(margins)
    y = np.asarray(labels, dtype=float)
    return p - y, p * (1.0 - p)


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    gain: float


_TIE = 1e-12


@numba.njit(cache=True)
def _beats(gain, best):
    return gain > best + _TIE * max(1.0, abs(best))


@numba.njit(cache=True)
def _scan(rows, x, g, h, G, H, lam, gamma, min_child_weight):
    """Best cut of one feature for rows already sorted by it.

    Returns ``(gain, k)``: the cut lies between ``rows[k]`` and ``rows[k+1]``.
    ``k == -1`` when no cut is admissible.  The first maximum wins, which is
    the lowest threshold.
    """
    best, best_k = -np.inf, -1
    GL = 0.0
    HL = 0.0
    parent = G * G / (H + lam)
    for j in range(rows.shape[0] - 1):
        r = rows[j]
        GL += g[r]
        HL += h[r]
        HR = H - HL
        if x[rows[j + 1]] > x[r] and HL >= min_child_weight and HR >= min_child_weight:
            GR = G - GL
            gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
            if best_k < 0 or _beats(gain, best):
                best, best_k = gain, j
    return best, best_k


@numba.njit(cache=True)
def _midpoint(lo, hi):
    thr = 0.5 * (lo + hi)
    if not (lo < thr and thr <= hi):
        thr = hi
    return thr


@numba.njit(cache=True)
def _sums(rows, g, h):
    G = 0.0
    H = 0.0
    for r in rows:
        G += g[r]
        H += h[r]
    return G, H


def find_best_split(indices, g, h, X, config, features: Optional[Sequence[int]] = None) -> Optional[SplitCandidate]:
    """Exact greedy search over ``features`` (default: all) for the rows ``indices``.

    Returns the positive-gain split with the largest gain, ties going to
    the lower feature index and then the lower threshold, or ``None``.
    """
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    feats = range(X.shape[1]) if features is None else sorted(features)
    G, H = _sums(idx, g, h)
    best = None
    for f in feats:
        col = np.ascontiguousarray(X[:, f])
        order = idx[np.argsort(col[idx], kind="stable")]
        gain, k = _scan(order, col, g, h, G, H, config.reg_lambda, config.gamma, config.min_child_weight)
        if k >= 0 and gain > 0 and (best is None or _beats(gain, best.gain)):
            best = SplitCandidate(int(f), float(_midpoint(col[order[k]], col[order[k + 1]])), float(gain))
    return best


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        i = 0
        while feature[i] >= 0:
            i = left[i] if X[r, feature[i]] < threshold[i] else right[i]
        out[r] = i
    return out


class Tree:
    """Flat binary tree.  ``feature[i] == -1`` marks node ``i`` as a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature >= 0))

    def split_counts(self, n_features: int) -> np.ndarray:
        used = self.feature[self.feature >= 0]
        return np.bincount(used, minlength=n_features).astype(np.int64)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.ascontiguousarray(X, dtype=float)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def walk(node) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf" in node:
                value[i] = float(node["leaf"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i] = walk(node["left"])
                right[i] = walk(node["right"])
            return i

        walk(root)
        return cls(feature, threshold, left, right, value)

    def structure(self, i: int = 0):
        """Nested (feature, left, right) shape with thresholds dropped."""
        if self.feature[i] < 0:
            return None
        return (int(self.feature[i]), self.structure(int(self.left[i])), self.structure(int(self.right[i])))


@numba.njit(cache=True)
def _grow(order, Xt, feats, g, h, max_depth, lam, gamma, min_child_weight):
    """Depth-first growth over per-feature presorted row lists.

    ``order[k]`` lists the rows sorted by feature ``feats[k]``; ``Xt`` is the
    transposed feature matrix.  Every node owns the same segment of each
    list, and a split partitions each segment stably.  Nodes are numbered in
    pre-order (node, left subtree, right subtree).
    """
    n = order.shape[1]
    cap = min(2 ** (max_depth + 1) - 1, 2 * n - 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_left = np.empty(cap, np.bool_)
    goes_left = np.zeros(Xt.shape[1], np.bool_)
    buf = np.empty(n, np.int64)
    st_start[0], st_end[0], st_depth[0], st_parent[0], st_left[0] = 0, n, 0, -1, False
    sp = 1
    count = 0
    while sp > 0:
        sp -= 1
        s, e, depth, parent = st_start[sp], st_end[sp], st_depth[sp], st_parent[sp]
        i = count
        count += 1
        if parent >= 0:
            if st_left[sp]:
                left[parent] = i
            else:
                right[parent] = i
        G, H = _sums(order[0, s:e], g, h)
        best_gain, best_f, best_k = 0.0, -1, -1
        if depth < max_depth and e - s >= 2:
            for k in range(feats.shape[0]):
                gain, j = _scan(order[k, s:e], Xt[feats[k]], g, h, G, H, lam, gamma, min_child_weight)
                if j >= 0 and gain > 0 and (best_f < 0 or _beats(gain, best_gain)):
                    best_gain, best_f, best_k = gain, k, j
        if best_f < 0:
            value[i] = -G / (H + lam)
            continue
        f = feats[best_f]
        rows = order[best_f, s:e]
        thr = _midpoint(Xt[f, rows[best_k]], Xt[f, rows[best_k + 1]])
        feature[i] = f
        threshold[i] = thr
        n_left = 0
        for r in rows:
            goes_left[r] = Xt[f, r] < thr
            if goes_left[r]:
                n_left += 1
        for k in range(feats.shape[0]):
            a, b = 0, n_left
            for j in range(s, e):
                r = order[k, j]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            order[k, s:e] = buf[: e - s]
        m = s + n_left
        st_start[sp], st_end[sp], st_depth[sp], st_parent[sp], st_left[sp] = m, e, depth + 1, i, False
        sp += 1
        st_start[sp], st_end[sp], st_depth[sp], st_parent[sp], st_left[sp] = s, m, depth + 1, i, True
        sp += 1
    return feature[:count], threshold[:count], left[:count], right[:count], value[:count]


def presort(X) -> np.ndarray:
    """Row order of every column of ``X`` (stable), shape ``(n_features, n_rows)``."""
    X = np.asarray(X, dtype=float)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def build_tree(indices, g, h, X, config, rng: Optional[np.random.Generator] = None,
               sorted_columns: Optional[np.ndarray] = None) -> tuple[Tree, np.ndarray]:
    """Grow one tree depth-first on rows ``indices``.

    Returns the tree and per-feature split counts.  ``colsample_bytree``
    draws the candidate features once for the whole tree.  Passing
    ``presort(X)`` as ``sorted_columns`` saves re-sorting across rounds.
    """
    X = np.asarray(X, dtype=float)
    n_features = X.shape[1]
    k = max(1, int(np.floor(config.colsample_bytree * n_features + 1e-12)))
    if k >= n_features:
        feats = np.arange(n_features, dtype=np.int64)
    else:
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(config.seed))
        feats = np.sort(rng.choice(n_features, size=k, replace=False)).astype(np.int64)
    rows = np.sort(np.asarray(indices, dtype=np.int64))
    if rows.size == 0:
        raise ValueError("cannot grow a tree on zero rows")
    Xt = np.ascontiguousarray(X.T)
    if sorted_columns is None:
        order = np.empty((feats.size, rows.size), dtype=np.int64)
        for j, f in enumerate(feats):
            order[j] = rows[np.argsort(Xt[f, rows], kind="stable")]
    elif rows.size == X.shape[0]:
        order = sorted_columns[feats]
    else:
        member = np.zeros(X.shape[0], dtype=bool)
        member[rows] = True
        order = np.stack([col[member[col]] for col in sorted_columns[feats]])
    tree = Tree(*_grow(order, Xt, feats, np.asarray(g, dtype=float), np.asarray(h, dtype=float),
                       int(config.max_depth), float(config.reg_lambda), float(config.gamma),
                       float(config.min_child_weight)))
    return tree, tree.split_counts(n_features)
