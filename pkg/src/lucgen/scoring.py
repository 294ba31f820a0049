"""Random-forest scoring model for land-use configurations.

A configuration is summarised by ``m + 2`` numbers: the per-category
totals, the normalised Shannon diversity of those totals and the fraction
of grid cells holding anything at all.  The forest is trained on excellent
(class 1) and terrible (class 0) configurations; the score of a new one is
the mean over trees of the leaf's excellent fraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError
from .landuse import diversity
from .numerics import SeededRng

LEAF = -1


def scoring_features(config) -> np.ndarray:
    """``[totals (m), diversity, occupancy]`` of one ``(m, n, n)`` configuration."""
    config = np.asarray(config, dtype=np.float64)
    if config.ndim != 3:
        raise DomainError(f"configuration must have shape (m, n, n), got {config.shape}")
    totals = config.sum(axis=(1, 2))
    occupancy = float((config.sum(axis=0) > 0).mean())
    return np.concatenate([totals, [diversity(config), occupancy]])


def scoring_matrix(configs) -> np.ndarray:
    return np.array([scoring_features(c) for c in configs])


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = 8      # None: grow until pure
    min_leaf: int = 2
    mtry: int | None = None        # None: ceil(sqrt(n_features))
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DomainError("a forest needs at least one tree")
        if self.min_leaf < 1:
            raise DomainError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise DomainError("max_depth must be >= 0")


@dataclass
class DecisionTree:
    """Flat binary tree; ``feature[i] == LEAF`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray          # P(excellent) at each node

    def leaf_index(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] != LEAF
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.prob[self.leaf_index(X)]

    def depth(self) -> int:
        def walk(i):
            return 0 if self.feature[i] == LEAF else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def to_dict(self) -> dict:
        nodes = []
        for i in range(len(self.feature)):
            p = float(self.prob[i])
            if self.feature[i] == LEAF:
                nodes.append({"leaf": [1.0 - p, p]})
            else:
                nodes.append({"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                              "left": int(self.left[i]), "right": int(self.right[i])})
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        k = len(d["nodes"])
        feature = np.full(k, LEAF, dtype=np.int64)
        threshold = np.zeros(k)
        left = np.full(k, LEAF, dtype=np.int64)
        right = np.full(k, LEAF, dtype=np.int64)
        prob = np.zeros(k)
        for i, node in enumerate(d["nodes"]):
            if "leaf" in node:
                prob[i] = node["leaf"][1]
            else:
                feature[i], threshold[i] = node["feature"], node["threshold"]
                left[i], right[i] = node["left"], node["right"]
        # internal nodes carry no probability in the dump; not needed for prediction
        return cls(feature, threshold, left, right, prob)


def _gini(pos, total):
    p = pos / total
    return 2.0 * p * (1.0 - p)


def _best_split(X, y, features, min_leaf):
    """Best ``(gain, feature, threshold)`` over ``features`` or ``None``.

    Candidate thresholds are midpoints between consecutive distinct values;
    both children must keep at least ``min_leaf`` samples.
    """
    n = len(y)
    parent = _gini(y.sum(), n) * n
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        left_n = np.arange(1, n)
        left_pos = np.cumsum(ys)[:-1]
        right_n = n - left_n
        right_pos = ys.sum() - left_pos
        ok = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not ok.any():
            continue
        cost = _gini(left_pos, left_n) * left_n + _gini(right_pos, right_n) * right_n
        cost = np.where(ok, cost, np.inf)
        i = int(np.argmin(cost))
        gain = parent - cost[i]
        if best is None or gain > best[0]:
            best = (gain, int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


def grow_tree(X, y, cfg: ForestConfig, mtry: int, rng: SeededRng) -> DecisionTree:
    feature, threshold, left, right, prob = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        prob.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    p = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        pos = y[idx].sum()
        if pos == 0 or pos == len(idx) or len(idx) < 2 * cfg.min_leaf:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        perm = rng.permutation(p)
        split = _best_split(X[idx], y[idx], perm[:mtry], cfg.min_leaf)
        if split is None:
            # the drawn features cannot separate this node; fall back to the rest
            split = _best_split(X[idx], y[idx], perm[mtry:], cfg.min_leaf)
        if split is None:
            continue
        _, f, t = split
        go_left = X[idx, f] <= t
        feature[node], threshold[node] = f, t
        left[node] = new_node(idx[go_left])
        right[node] = new_node(idx[~go_left])
        stack.append((right[node], idx[~go_left], depth + 1))
        stack.append((left[node], idx[go_left], depth + 1))
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(prob))


@dataclass
class RandomForestModel:
    trees: list
    config: ForestConfig
    n_features: int
    oob_accuracy: float = float("nan")
    feature_names: list = field(default_factory=list)

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DomainError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {"format": "lucgen-forest", "version": 1, "config": asdict(self.config),
                "n_features": self.n_features, "oob_accuracy": self.oob_accuracy,
                "feature_names": list(self.feature_names),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "RandomForestModel":
        if d.get("format") != "lucgen-forest":
            raise DomainError("not a forest dump")
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], ForestConfig(**d["config"]),
                   int(d["n_features"]), float(d["oob_accuracy"]), list(d.get("feature_names", [])))


def rf_train(samples, labels, cfg: ForestConfig | None = None, feature_names=None) -> RandomForestModel:
    """Bootstrap-aggregated Gini trees; ``labels`` are 1 for excellent, 0 for terrible."""
    cfg = cfg or ForestConfig()
    X = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise DomainError("samples must be (N, p) with one label per row")
    if not np.all(np.isfinite(X)):
        raise DomainError("samples must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    if y.min() == y.max():
        raise PreconditionError("training data must contain both classes")
    n, p = X.shape
    mtry = cfg.mtry or math.ceil(math.sqrt(p))
    mtry = max(1, min(mtry, p))
    rng = SeededRng(cfg.seed, "forest")
    trees = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for k in range(cfg.n_trees):
        tr = rng.child(f"tree{k}")
        boot = tr.integers(0, n, size=n)
        tree = grow_tree(X[boot], y[boot], cfg, mtry, tr)
        trees.append(tree)
        out = np.ones(n, dtype=bool)
        out[boot] = False
        if out.any():
            oob_sum[out] += tree.predict_proba(X[out])
            oob_cnt[out] += 1
    seen = oob_cnt > 0
    oob = float("nan")
    if seen.any():
        pred = (oob_sum[seen] / oob_cnt[seen]) > 0.5
        oob = float(np.mean(pred == (y[seen] == 1)))
    return RandomForestModel(trees, cfg, p, oob, list(feature_names or []))


def rf_score(model: RandomForestModel, config) -> float:
    """Excellence score in ``[0, 1]`` of one configuration."""
    return float(model.predict_proba(scoring_features(config)[None, :])[0])


def rf_score_many(model: RandomForestModel, configs) -> np.ndarray:
    return model.predict_proba(scoring_matrix(configs))


def save_forest(path, model: RandomForestModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def load_forest(path) -> RandomForestModel:
    with open(path, encoding="utf-8") as fh:
        return RandomForestModel.from_dict(json.load(fh))
