"""Random forest regression built from CART trees.

Each tree draws its randomness from its own child stream of the root seed,
so tree ``b`` is the same whether the forest has 10 or 1000 trees and
whether trees are built sequentially or on a thread pool.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import ValidationError
from .linear import DesignMatrix
from .seeding import child_rng


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_samples_leaf: int = 2
    max_features: Optional[int] = 2
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1", field="n_trees")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1", field="min_samples_leaf")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0", field="max_depth")
        if self.max_features is not None and self.max_features < 1:
            raise ValidationError("max_features must be >= 1", field="max_features")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], np.int64), np.array(d["threshold"], float),
                   np.array(d["left"], np.int64), np.array(d["right"], np.int64),
                   np.array(d["value"], float))


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best variance-reduction split of one feature: (score, threshold) or None.

    ``score`` is S_L^2/n_L + S_R^2/n_R; maximising it minimises child SSE.
    """
    n = len(x)
    if n < 2 * min_leaf:
        return None
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    cs = np.cumsum(ys)
    total = cs[-1]
    i = np.arange(min_leaf, n - min_leaf + 1)
    valid = xs[i - 1] < xs[i]
    if not valid.any():
        return None
    i = i[valid]
    left = cs[i - 1]
    score = left**2 / i + (total - left) ** 2 / (n - i)
    k = int(np.argmax(score))
    lo, hi = xs[i[k] - 1], xs[i[k]]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return float(score[k]), float(thr)


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_depth=None,
               min_samples_leaf: int = 1, max_features: Optional[int] = None) -> Tree:
    n, d = X.shape
    m = d if max_features is None else max_features
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            arr.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if np.all(yi == yi[0]):
            value[node] = float(yi[0])
            continue
        value[node] = float(yi.mean())
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_samples_leaf:
            continue
        parent = yi.sum() ** 2 / len(idx)
        drawn = rng.permutation(d)
        best = None
        # the first m drawn features compete; the rest are a fallback when none can split
        for group in (np.sort(drawn[:m]), np.sort(drawn[m:])):
            for f in group:
                res = _best_split(X[idx, f], yi, min_samples_leaf)
                if res is not None and res[0] > parent and (best is None or res[0] > best[0]):
                    best = (res[0], int(f), res[1])
            if best is not None:
                break
        if best is None:
            continue
        _, f, thr = best
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))

    return Tree(np.array(feature, np.int64), np.array(threshold, float),
                np.array(left, np.int64), np.array(right, np.int64), np.array(value, float))


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    config: ForestConfig
    columns: tuple = ()

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self):
        return {"model": "rf", "config": self.config.to_dict(), "columns": list(self.columns),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), ForestConfig(**d["config"]),
                   tuple(d["columns"]))


def _fit_one(b: int, X: np.ndarray, y: np.ndarray, cfg: ForestConfig) -> Tree:
    rng = child_rng(cfg.seed, b)
    if cfg.bootstrap:
        idx = rng.integers(0, len(y), len(y))
        Xb, yb = X[idx], y[idx]
    else:
        Xb, yb = X, y
    return build_tree(Xb, yb, rng, cfg.max_depth, cfg.min_samples_leaf, cfg.max_features)


def rf_fit(D: DesignMatrix, cfg: ForestConfig | None = None, threads: int = 1) -> Forest:
    cfg = cfg or ForestConfig()
    if D.n < 2:
        raise ValidationError("random forest needs at least 2 rows")
    if cfg.max_features is not None and cfg.max_features > D.d:
        raise ValidationError(f"max_features={cfg.max_features} exceeds d={D.d}", field="max_features")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trees = list(pool.map(lambda b: _fit_one(b, D.X, D.y, cfg), range(cfg.n_trees)))
    else:
        trees = [_fit_one(b, D.X, D.y, cfg) for b in range(cfg.n_trees)]
    return Forest(tuple(trees), cfg, D.columns)


def rf_predict(forest: Forest, X) -> np.ndarray:
    return forest.predict(X)
