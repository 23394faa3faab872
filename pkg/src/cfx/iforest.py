"""Isolation forest on flattened series (100 trees, subsample 256, depth limit ceil(log2 psi))."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER = 0.5772156649


def harmonic(i: float) -> float:
    return math.log(i) + EULER


def c_factor(n: int) -> float:
    """Average unsuccessful-search path length in a BST of ``n`` points; 0 for n <= 1."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass(frozen=True, eq=False)
class Tree:
    # node arrays; leaves have feature == -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        for r, x in enumerate(X):
            node, depth = 0, 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] < self.threshold[node] else self.right[node]
                depth += 1
            out[r] = depth + c_factor(int(self.size[node]))
        return out

    def same_structure(self, other: Tree) -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("feature", "threshold", "left", "right", "size"))


def _grow(X: np.ndarray, depth_limit: int, rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, size = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (size, 0)):
            lst.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        size[node] = len(idx)
        if len(idx) <= 1 or depth >= depth_limit:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        f = int(splittable[rng.integers(splittable.size)])
        t = float(rng.uniform(lo[f], hi[f]))
        mask = sub[:, f] < t
        feature[node], threshold[node] = f, t
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        # push right first so the left subtree gets the lower node ids
        stack.append((r, idx[~mask], depth + 1))
        stack.append((l, idx[mask], depth + 1))

    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(size))


class IsolationForest:
    def __init__(self, n_trees: int = 100, subsample: int = 256):
        self.n_trees = n_trees
        self.subsample = subsample
        self.trees: list[Tree] | None = None
        self.psi = None
        self.n_features = None

    @property
    def depth_limit(self) -> int:
        return math.ceil(math.log2(self.psi)) if self.psi > 1 else 0

    def fit(self, reference, seed: int = 0) -> IsolationForest:
        X = _flatten(reference)
        if len(X) == 0:
            raise ValueError("isolation forest needs a nonempty reference set")
        rng = np.random.default_rng(seed)
        self.psi = min(self.subsample, len(X))
        self.n_features = X.shape[1]
        self.trees = []
        for _ in range(self.n_trees):
            rows = rng.choice(len(X), size=self.psi, replace=False)
            self.trees.append(_grow(X[rows], self.depth_limit, rng))
        return self

    def score(self, queries) -> np.ndarray:
        """Anomaly score ``2 ** (-E[h(x)] / c(psi))`` in (0, 1]; higher is more anomalous."""
        if self.trees is None:
            raise RuntimeError("isolation forest is not fitted")
        X = _flatten(queries)
        if X.shape[1] != self.n_features and X.size == self.n_features:
            X = X.reshape(1, -1)  # one (T, d) series
        if X.shape[1] != self.n_features:
            raise ValueError(f"query has {X.shape[1]} features, forest was fit on {self.n_features}")
        mean_h = np.mean([t.path_lengths(X) for t in self.trees], axis=0)
        c = c_factor(self.psi)
        # single-point forests give 0/0; score those at the 0.5 boundary
        ratio = mean_h / c if c > 0 else np.ones_like(mean_h)
        return np.power(2.0, -ratio)

    def nominal(self, queries, threshold: float = 0.5) -> np.ndarray:
        return self.score(queries) < threshold


def _flatten(series) -> np.ndarray:
    if isinstance(series, np.ndarray):
        arr = np.asarray(series, dtype=np.float64)
    else:
        arr = np.array([getattr(s, "values", s) for s in series], dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None]
    return arr.reshape(len(arr), int(np.prod(arr.shape[1:])))


def iso_forest_fit(reference, seed: int = 0, n_trees: int = 100, subsample: int = 256) -> IsolationForest:
    return IsolationForest(n_trees, subsample).fit(reference, seed)


def iso_forest_score(forest: IsolationForest, series, threshold: float = 0.5) -> float:
    """Fraction of ``series`` the forest classifies as nominal (score below ``threshold``)."""
    return float(np.mean(forest.nominal(series, threshold)))
