"""Random forest and multinomial gradient boosting over the tree primitives."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..schema import N_CLASSES, schema_hash
from .tree import (
    RegressionTree,
    TreeModel,
    _check_X,
    _normalize,
    fit_regression_tree,
    grow_tree,
    presort,
)

MAX_GBM_ESTIMATORS = 20


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    bootstrap: bool = True
    # "sqrt", an int, or None for all features.
    max_features: str | int | None = "sqrt"
    max_depth: int | None = None
    seed: int = 0
    n_jobs: int = 1


class ForestModel:
    kind = "forest"
    n_classes = N_CLASSES

    def __init__(self, trees: Sequence[TreeModel], feature_names, schema_hash_=None, encoders=None, meta=None):
        if len(trees) < 1:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)
        self.feature_names = tuple(feature_names)
        self.schema_hash = schema_hash_ if schema_hash_ is not None else schema_hash(self.feature_names)
        self.encoders = encoders
        self.meta = dict(meta or {})

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        acc = np.zeros((X.shape[0], N_CLASSES))
        for t in self.trees:
            acc += t.predict_proba(X)
        return acc / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def feature_importances(self) -> np.ndarray:
        return _normalize(np.mean([t.feature_importances() for t in self.trees], axis=0))


def _resolve_max_features(spec, d: int) -> int | None:
    if spec is None:
        return None
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    k = int(spec)
    if k < 1:
        raise ValueError("max_features must be >= 1")
    return min(k, d)


def train_forest(
    X,
    y,
    config: ForestConfig = ForestConfig(),
    feature_names: Sequence[str] | None = None,
    schema_hash_: bytes | None = None,
    encoders=None,
) -> ForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data is empty")
    if config.n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    n, d = X.shape
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(d)]
    k = _resolve_max_features(config.max_features, d)
    # One child seed per tree so results do not depend on scheduling.
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_estimators)

    def build(i: int) -> TreeModel:
        rng = np.random.default_rng(seeds[i])
        idx = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        arrays = grow_tree(X[idx], y[idx], max_depth=config.max_depth, max_features=k, rng=rng)
        return TreeModel(*arrays, feature_names=names, schema_hash_=schema_hash_)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            trees = list(pool.map(build, range(config.n_estimators)))
    else:
        trees = [build(i) for i in range(config.n_estimators)]
    meta = {
        "seed": config.seed,
        "bootstrap": config.bootstrap,
        "max_features": k if k is not None else d,
        "max_depth": config.max_depth,
    }
    return ForestModel(trees, names, schema_hash_, encoders, meta)


@dataclass(frozen=True)
class GbmConfig:
    n_estimators: int = MAX_GBM_ESTIMATORS
    learning_rate: float = 0.1
    max_depth: int = 3
    seed: int = 0


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def deviance(y: np.ndarray, proba: np.ndarray) -> float:
    """Mean multinomial deviance (negative log-likelihood)."""
    p = proba[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


class GbmModel:
    kind = "gbm"
    n_classes = N_CLASSES

    def __init__(
        self,
        init_scores,
        stages: Sequence[Sequence[RegressionTree]],
        learning_rate: float,
        feature_names,
        schema_hash_=None,
        encoders=None,
        meta=None,
    ):
        if len(stages) > MAX_GBM_ESTIMATORS:
            raise ValueError(f"at most {MAX_GBM_ESTIMATORS} boosting stages are allowed")
        self.init_scores = np.asarray(init_scores, dtype=np.float64)
        self.stages = [list(s) for s in stages]
        self.learning_rate = float(learning_rate)
        self.feature_names = tuple(feature_names)
        self.schema_hash = schema_hash_ if schema_hash_ is not None else schema_hash(self.feature_names)
        self.encoders = encoders
        self.meta = dict(meta or {})

    @property
    def n_estimators(self) -> int:
        return len(self.stages)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def decision_function(self, X, n_stages: int | None = None) -> np.ndarray:
        X = _check_X(X, self.n_features)
        scores = np.tile(self.init_scores, (X.shape[0], 1))
        for stage in self.stages[:n_stages]:
            for k, tree in enumerate(stage):
                scores[:, k] += self.learning_rate * tree.predict(X)
        return scores

    def predict_proba(self, X, n_stages: int | None = None) -> np.ndarray:
        return softmax(self.decision_function(X, n_stages))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def feature_importances(self) -> np.ndarray:
        per_tree = [t.importances for s in self.stages for t in s if t.importances is not None]
        if not per_tree:
            raise ValueError("importances are not available for a deserialized boosting model")
        return _normalize(np.sum(per_tree, axis=0))


def train_gbm(
    X,
    y,
    config: GbmConfig = GbmConfig(),
    feature_names: Sequence[str] | None = None,
    schema_hash_: bytes | None = None,
    encoders=None,
) -> GbmModel:
    """Multinomial deviance boosting with one regression tree per class per stage.

    Leaf values use the one-step Newton estimate (K-1)/K * sum(r) / sum(|r|(1-|r|)).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data is empty")
    if not 1 <= config.n_estimators <= MAX_GBM_ESTIMATORS:
        raise ValueError(f"n_estimators must lie in [1, {MAX_GBM_ESTIMATORS}], got {config.n_estimators}")
    n, d = X.shape
    K = N_CLASSES
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(d)]
    prior = np.bincount(y, minlength=K) / n
    init = np.log(np.clip(prior, 1e-12, None))
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    scores = np.tile(init, (n, 1))
    stages: list[list[RegressionTree]] = []
    history = [deviance(y, softmax(scores))]
    order = presort(X)
    for _ in range(config.n_estimators):
        proba = softmax(scores)
        stage = []
        for k in range(K):
            resid = Y[:, k] - proba[:, k]

            def newton(idx, r=resid):
                rr = r[idx]
                den = np.sum(np.abs(rr) * (1.0 - np.abs(rr)))
                return 0.0 if den < 1e-150 else (K - 1) / K * rr.sum() / den

            tree = fit_regression_tree(X, resid, config.max_depth, newton, order)
            stage.append(tree)
        for k, tree in enumerate(stage):
            scores[:, k] += config.learning_rate * tree.predict(X)
        stages.append(stage)
        history.append(deviance(y, softmax(scores)))
    meta = {
        "seed": config.seed,
        "max_depth": config.max_depth,
        "train_deviance": history,
    }
    return GbmModel(init, stages, config.learning_rate, names, schema_hash_, encoders, meta)
