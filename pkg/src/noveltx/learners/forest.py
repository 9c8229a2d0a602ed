"""Random-forest regressor grown from scratch.

Mirrors a random-forest booster configured with ``n_estimators=300``,
``colsample_bynode=0.6`` and ``min_child_weight=0.001``: bootstrap rows per
tree, a fresh feature subsample at every node, prediction = mean over trees.
For squared loss the hessian of each sample is 1, so the minimum child weight
becomes a minimum leaf size of ``max(1, ceil(min_child_weight))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _tree


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 300
    colsample_bynode: float = 0.6
    min_child_weight: float = 0.001
    max_depth: int | None = 6
    bootstrap: bool = True

    @property
    def min_samples_leaf(self) -> int:
        return max(1, math.ceil(self.min_child_weight))

    def features_per_node(self, n_features: int) -> int:
        return max(1, min(n_features, math.ceil(self.colsample_bynode * n_features)))


@dataclass(frozen=True)
class RegressionTree:
    """Single tree view over the forest arrays."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _tree.apply_tree(X, self.feature, self.threshold, self.left, self.right,
                         self.value, out)
        return out

    def to_dict(self) -> dict:
        nodes = []
        for i in range(len(self.feature)):
            if self.feature[i] == _tree.LEAF:
                nodes.append({"id": i, "leaf": float(self.value[i])})
            else:
                nodes.append({
                    "id": i,
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                })
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionTree":
        nodes = data["nodes"]
        n = len(nodes)
        feature = np.full(n, _tree.LEAF, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, _tree.LEAF, dtype=np.int64)
        right = np.full(n, _tree.LEAF, dtype=np.int64)
        value = np.zeros(n)
        for node in nodes:
            i = node["id"]
            if "leaf" in node:
                value[i] = node["leaf"]
            else:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = node["left"]
                right[i] = node["right"]
        return cls(feature, threshold, left, right, value)


@dataclass
class ForestModel:
    """Fitted forest; tree arrays are stacked with shape (n_trees, max_nodes)."""

    arrays: tuple[np.ndarray, ...] = field(repr=False)
    n_nodes: np.ndarray = field(repr=False)
    params: ForestParams
    seed: int
    feature_names: list[str]
    importances: np.ndarray = field(repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def trees(self) -> list[RegressionTree]:
        return [RegressionTree(*(a[t, :k] for a in self.arrays))
                for t, k in enumerate(self.n_nodes)]

    @classmethod
    def from_trees(cls, trees, params, seed, feature_names, importances) -> "ForestModel":
        return cls(_stack(trees), np.array([len(t.feature) for t in trees]),
                   params, seed, list(feature_names), np.asarray(importances, dtype=float))

    def predict(self, X) -> np.ndarray:
        return rf_predict(self, X)

    def to_json(self) -> str:
        payload = {
            "params": {
                "n_trees": self.params.n_trees,
                "colsample_bynode": self.params.colsample_bynode,
                "min_child_weight": self.params.min_child_weight,
                "max_depth": self.params.max_depth,
                "bootstrap": self.params.bootstrap,
            },
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "importances": [float(v) for v in self.importances],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        data = json.loads(text)
        return cls.from_trees(
            [RegressionTree.from_dict(t) for t in data["trees"]],
            ForestParams(**data["params"]),
            data["seed"],
            data["feature_names"],
            data["importances"],
        )


def _tree_seeds(seed: int, n_trees: int) -> np.ndarray:
    # numba's np.random.seed takes a uint32
    return np.random.SeedSequence(seed).generate_state(n_trees).astype(np.int64)


def _check_matrix(X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if y is not None:
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(f"y shape {y.shape} does not match X rows {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
    return X, y


def rf_train(X, y, params: ForestParams | None = None, seed: int = 0,
             feature_names: Sequence[str] | None = None) -> ForestModel:
    """Fit a random forest; bit-identical output for identical inputs and seed."""
    params = params or ForestParams()
    X, y = _check_matrix(X, y)
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 rows to train, got {n}")
    if d == 0:
        raise ValueError("X has no columns")
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(d)]
    elif len(feature_names) != d:
        raise ValueError("feature_names length does not match X columns")

    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    capacity = 2 * n - 1
    if max_depth >= 0:
        capacity = min(capacity, 2 ** (max_depth + 1) - 1)
    T = params.n_trees
    feature = np.empty((T, capacity), dtype=np.int64)
    threshold = np.empty((T, capacity))
    left = np.empty((T, capacity), dtype=np.int64)
    right = np.empty((T, capacity), dtype=np.int64)
    value = np.empty((T, capacity))
    importance = np.zeros((T, d))
    n_nodes = np.empty(T, dtype=np.int64)

    _tree.grow_forest(X, y, _tree_seeds(seed, T), params.features_per_node(d),
                      max_depth, params.min_samples_leaf, params.bootstrap,
                      feature, threshold, left, right, value, importance, n_nodes)

    return ForestModel((feature, threshold, left, right, value), n_nodes, params,
                       seed, list(feature_names), importance.sum(axis=0))


def _stack(trees: list[RegressionTree]):
    width = max(len(t.feature) for t in trees)
    T = len(trees)
    feature = np.full((T, width), _tree.LEAF, dtype=np.int64)
    threshold = np.zeros((T, width))
    left = np.full((T, width), _tree.LEAF, dtype=np.int64)
    right = np.full((T, width), _tree.LEAF, dtype=np.int64)
    value = np.zeros((T, width))
    for i, t in enumerate(trees):
        k = len(t.feature)
        feature[i, :k] = t.feature
        threshold[i, :k] = t.threshold
        left[i, :k] = t.left
        right[i, :k] = t.right
        value[i, :k] = t.value
    return feature, threshold, left, right, value


def rf_predict(model: ForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and X.shape[0] == 0:
        return np.empty(0)
    X, _ = _check_matrix(X)
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"X has {X.shape[1]} columns, model was trained on {model.n_features}")
    return _tree.predict_forest(X, *model.arrays)


def select_features(X, y, k: int = 20, params: ForestParams | None = None,
                    seed: int = 0) -> list[int]:
    """Indices of the ``k`` features with the largest split-gain importance.

    Importance is the total squared-error reduction of all splits on a feature.
    Returned in rank order, ties broken by lower index. When ``k`` equals the
    column count every index is returned in original order without fitting.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if k > d:
        raise ValueError(f"cannot select {k} features from {d} columns")
    if k == d:
        return list(range(d))
    model = rf_train(X, y, params, seed)
    imp = model.importances
    ranked = np.lexsort((np.arange(d), -imp))
    return [int(i) for i in ranked[:k]]
