"""CART classification trees and least-squares regression trees."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..schema import N_CLASSES, ClassLabel, schema_hash

LEAF = -1
# Minimum improvement for one candidate split to displace an earlier one.
_TIE_EPS = 1e-12


def gini(class_counts) -> float:
    """Gini impurity 1 - sum(p_i^2) of a class-count vector."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("class counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.dot(p, p))


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    impurity_decrease: float


def _midpoint(lo: float, hi: float) -> float:
    mid = (lo + hi) / 2.0
    # Adjacent floats: keep `lo` on the left.
    if mid >= hi or not np.isfinite(mid):
        mid = lo
    return float(mid)


def _scan_classification(x: np.ndarray, y: np.ndarray, n_classes: int, parent: np.ndarray):
    """Best (weighted child gini, threshold) for one feature, or None."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), y[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    right = parent[None, :] - left
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    # n * weighted child gini = nl - sum(l^2)/nl + nr - sum(r^2)/nr
    score = (n - np.einsum("ij,ij->i", left, left) / nl - np.einsum("ij,ij->i", right, right) / nr) / n
    score[~valid] = np.inf
    # Lowest threshold among scores tied up to rounding noise.
    i = int(np.flatnonzero(score <= score.min() + _TIE_EPS)[0])
    return float(score[i]), _midpoint(xs[i], xs[i + 1])


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    candidate_features: Sequence[int] | None = None,
    n_classes: int = N_CLASSES,
) -> Split | None:
    """Gini-optimal axis-aligned split over the candidate features.

    Returns None when the node is pure or no candidate feature has two distinct
    values.  A split with zero impurity decrease is still returned otherwise, so
    XOR-shaped nodes keep growing.  Ties go to the lowest feature index, then the
    lowest threshold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] < 2:
        return None
    parent = np.bincount(y, minlength=n_classes).astype(np.float64)
    if np.count_nonzero(parent) <= 1:
        return None
    n = X.shape[0]
    parent_gini = 1.0 - float(np.dot(parent, parent)) / (n * n)
    features = range(X.shape[1]) if candidate_features is None else sorted(candidate_features)
    best: tuple[float, int, float] | None = None
    for f in features:
        res = _scan_classification(X[:, f], y, n_classes, parent)
        if res is None:
            continue
        score, thr = res
        if best is None or score < best[0] - _TIE_EPS:
            best = (score, f, thr)
    if best is None:
        return None
    return Split(best[1], best[2], max(0.0, parent_gini - best[0]))


def _best_split_sampled(X, y, n_classes, order: np.ndarray, k: int) -> Split | None:
    # Evaluate the first k shuffled features; if none is splittable keep drawing.
    split = best_split(X, y, order[:k], n_classes)
    if split is not None or k >= len(order):
        return split
    for f in order[k:]:
        split = best_split(X, y, [int(f)], n_classes)
        if split is not None:
            return split
    return None


@dataclass
class _Builder:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)

    def add(self) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        return len(self.feature) - 1


def _apply(feature, threshold, left, right, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(feature[node] != LEAF)
    while active.size:
        nd = node[active]
        go_left = X[active, feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = active[feature[node[active]] != LEAF]
    return node


@dataclass(frozen=True)
class CartConfig:
    max_depth: int | None = None
    min_samples_split: int = 2
    seed: int = 0


class TreeModel:
    """Classification tree stored as flat preorder arrays."""

    kind = "tree"

    def __init__(
        self,
        feature: np.ndarray,
        threshold: np.ndarray,
        left: np.ndarray,
        right: np.ndarray,
        counts: np.ndarray,
        feature_names: Sequence[str],
        schema_hash_: bytes | None = None,
        encoders=None,
        meta: dict | None = None,
    ):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.uint64).reshape(-1, N_CLASSES)
        self.feature_names = tuple(feature_names)
        self.schema_hash = schema_hash_ if schema_hash_ is not None else schema_hash(self.feature_names)
        self.encoders = encoders
        self.meta = dict(meta or {})
        internal = self.feature != LEAF
        if internal.any() and self.feature[internal].max() >= len(self.feature_names):
            raise ValueError("tree references a feature index beyond the feature count")

    n_classes = N_CLASSES

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = _check_X(X, self.n_features)
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        leaf_counts = self.counts[self.apply(X)].astype(np.float64)
        return leaf_counts / leaf_counts.sum(axis=1, keepdims=True)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def node_counts(self) -> np.ndarray:
        """Training class counts for every node, summed up from the leaves."""
        totals = self.counts.astype(np.float64).copy()
        for i in range(self.node_count - 1, -1, -1):
            if self.feature[i] != LEAF:
                totals[i] = totals[self.left[i]] + totals[self.right[i]]
        return totals

    def feature_importances(self) -> np.ndarray:
        totals = self.node_counts()
        n = totals.sum(axis=1)
        imp = np.zeros(self.n_features, dtype=np.float64)
        root_n = n[0]
        for i in np.flatnonzero(self.feature != LEAF):
            l, r = self.left[i], self.right[i]
            dec = n[i] * _gini_rows(totals[i]) - n[l] * _gini_rows(totals[l]) - n[r] * _gini_rows(totals[r])
            imp[self.feature[i]] += dec / root_n
        return _normalize(imp)


def _gini_rows(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts / total
    return 1.0 - float(np.dot(p, p))


def _normalize(imp: np.ndarray) -> np.ndarray:
    imp = np.where(imp < 0, 0.0, imp)
    total = imp.sum()
    return imp / total if total > 0 else imp


def _check_X(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    *,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
    n_classes: int = N_CLASSES,
):
    """Greedy depth-first growth; returns (feature, threshold, left, right, counts)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    d = X.shape[1]
    b = _Builder()
    leaf_counts: dict[int, np.ndarray] = {}
    # (sample indices, depth, parent id, is_left); popped LIFO so ids come out preorder.
    stack = [(np.arange(X.shape[0]), 0, LEAF, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = b.add()
        if parent != LEAF:
            (b.left if is_left else b.right)[parent] = node
        Xn, yn = X[idx], y[idx]
        split = None
        if idx.size >= max(2, min_samples_split) and (max_depth is None or depth < max_depth):
            if max_features is None or max_features >= d:
                split = best_split(Xn, yn, None, n_classes)
            else:
                split = _best_split_sampled(Xn, yn, n_classes, rng.permutation(d), max_features)
        if split is None:
            leaf_counts[node] = np.bincount(yn, minlength=n_classes)
            continue
        b.feature[node] = split.feature
        b.threshold[node] = split.threshold
        go_left = Xn[:, split.feature] <= split.threshold
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))
    counts = np.zeros((len(b.feature), n_classes), dtype=np.uint64)
    for node, c in leaf_counts.items():
        counts[node] = c
    return (
        np.array(b.feature, dtype=np.int64),
        np.array(b.threshold, dtype=np.float64),
        np.array(b.left, dtype=np.int64),
        np.array(b.right, dtype=np.int64),
        counts,
    )


def train_cart(
    X: np.ndarray,
    y: np.ndarray,
    config: CartConfig = CartConfig(),
    feature_names: Sequence[str] | None = None,
    schema_hash_: bytes | None = None,
    encoders=None,
) -> TreeModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data is empty")
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y differ in length")
    if feature_names is None:
        feature_names = [f"x{i}" for i in range(X.shape[1])]
    arrays = grow_tree(X, y, max_depth=config.max_depth, min_samples_split=config.min_samples_split)
    meta = {"seed": config.seed, "max_depth": config.max_depth, "split_rule": "gini"}
    return TreeModel(*arrays, feature_names=feature_names, schema_hash_=schema_hash_, encoders=encoders, meta=meta)


def leaf_tree(counts: Sequence[int], feature_names: Sequence[str] = ("x0",)) -> TreeModel:
    """A single-leaf tree holding the given class counts."""
    return TreeModel([LEAF], [0.0], [LEAF], [LEAF], np.asarray([counts]), feature_names)


class RegressionTree:
    """Least-squares regression tree with per-leaf output values."""

    def __init__(self, feature, threshold, left, right, value, importances=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.importances = importances

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature ascending sample order, shape (n_features, n_samples)."""
    return np.argsort(X, axis=0, kind="stable").T.copy()


def _scan_sorted(xs: np.ndarray, rs: np.ndarray):
    n = xs.shape[0]
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    csum = np.cumsum(rs)
    total = csum[-1]
    left = csum[:-1]
    nl = np.arange(1, n, dtype=np.float64)
    gain = left * left / nl + (total - left) ** 2 / (n - nl) - total * total / n
    gain[~valid] = -np.inf
    i = int(np.argmax(gain))
    return float(gain[i]), _midpoint(xs[i], xs[i + 1])


def fit_regression_tree(
    X: np.ndarray,
    target: np.ndarray,
    max_depth: int,
    leaf_value=None,
    order: np.ndarray | None = None,
) -> RegressionTree:
    """Grow a depth-limited least-squares tree on `target`.

    `leaf_value(idx)` sets each leaf's output (default: mean target).  `order`
    is an optional `presort(X)` result shared across many fits on the same X.
    """
    n, d = X.shape
    if order is None:
        order = presort(X)
    b = _Builder()
    values: dict[int, float] = {}
    imp = np.zeros(d, dtype=np.float64)
    member = np.zeros(n, dtype=bool)
    stack = [(np.arange(n), 0, LEAF, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = b.add()
        if parent != LEAF:
            (b.left if is_left else b.right)[parent] = node
        best = None
        if idx.size >= 2 and depth < max_depth:
            member[:] = False
            member[idx] = True
            for f in range(d):
                o = order[f]
                o = o[member[o]]
                res = _scan_sorted(X[o, f], target[o])
                if res is None:
                    continue
                if best is None or res[0] > best[0] + _TIE_EPS:
                    best = (res[0], f, res[1])
        if best is None or best[0] <= 0.0:
            values[node] = float(leaf_value(idx)) if leaf_value else float(target[idx].mean())
            continue
        gain, f, thr = best
        imp[f] += gain / n
        b.feature[node] = f
        b.threshold[node] = thr
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))
    value = np.zeros(len(b.feature), dtype=np.float64)
    for node, v in values.items():
        value[node] = v
    return RegressionTree(b.feature, b.threshold, b.left, b.right, value, imp)


def predict_label(model, row) -> tuple[ClassLabel, np.ndarray]:
    """Classify one encoded row with any model kind."""
    proba = model.predict_proba(np.asarray(row, dtype=np.float64)[None, :])[0]
    return ClassLabel(int(np.argmax(proba))), proba
