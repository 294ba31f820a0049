import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lucgen.errors import DomainError, PreconditionError
from lucgen.numerics import SeededRng
from lucgen.scoring import (ForestConfig, RandomForestModel, grow_tree, load_forest, rf_score,
                            rf_score_many, rf_train, save_forest, scoring_features)


def test_scoring_features_examples():
    np.testing.assert_array_equal(scoring_features(np.zeros((4, 3, 3))), np.zeros(6))
    f = scoring_features(np.ones((4, 3, 3)))
    np.testing.assert_allclose(f, [9, 9, 9, 9, 1, 1])
    with pytest.raises(DomainError):
        scoring_features(np.zeros((3, 3)))


@given(arrays(np.float64, (3, 2, 2), elements=st.sampled_from([0.0, 0.5, 1.0, 4.0])))
def test_scoring_features_recount(c):
    f = scoring_features(c)
    totals = [sum(c[k, i, j] for i in range(2) for j in range(2)) for k in range(3)]
    np.testing.assert_allclose(f[:3], totals)
    s = sum(totals)
    ent = 0.0 if s == 0 else -sum(t / s * math.log(t / s) for t in totals if t > 0) / math.log(3)
    assert f[3] == pytest.approx(ent)
    occupied = sum(1 for i in range(2) for j in range(2) if c[:, i, j].sum() > 0)
    assert f[4] == occupied / 4


def separable(n=40, seed=0):
    r = np.random.default_rng(seed)
    x = r.uniform(0, 1, size=n)
    return x[:, None], (x > 0.5).astype(float)


def test_separable_reaches_full_accuracy():
    X, y = separable()
    model = rf_train(X, y, ForestConfig(n_trees=10, seed=1))
    assert np.all((model.predict_proba(X) > 0.5) == (y == 1))


def test_depth_zero_is_majority_leaf():
    X, y = separable()
    y[:30] = 1
    model = rf_train(X, y, ForestConfig(n_trees=5, max_depth=0))
    for t in model.trees:
        assert t.depth() == 0
    assert np.all(model.predict_proba(X) > 0.5)


def test_unbounded_trees_fit_bootstrap():
    r = np.random.default_rng(3)
    X = r.normal(size=(60, 4))
    y = (r.uniform(size=60) < 0.5).astype(float)
    cfg = ForestConfig(n_trees=5, max_depth=None, min_leaf=1, seed=4)
    rng = SeededRng(4, "forest")
    for k in range(5):
        tr = rng.child(f"tree{k}")
        boot = tr.integers(0, 60, size=60)
        tree = grow_tree(X[boot], y[boot], cfg, 2, tr)
        assert np.all(tree.predict_proba(X[boot]) == y[boot])


def test_single_stump_is_certain():
    X, y = separable()
    model = rf_train(X, y, ForestConfig(n_trees=1, max_depth=1, min_leaf=1))
    assert set(np.unique(model.predict_proba(X))) <= {0.0, 1.0}


def test_single_class_raises():
    with pytest.raises(PreconditionError):
        rf_train(np.zeros((4, 2)), np.ones(4))
    with pytest.raises(DomainError):
        rf_train(np.zeros((4, 2)), np.array([0, 1, 2, 0]))


def corpus(seed=0, n=100):
    r = np.random.default_rng(seed)
    good = r.poisson(3.0, size=(n, 4, 3, 3)).astype(float)
    bad = np.zeros((n, 4, 3, 3))
    bad[:, 0] = r.poisson(1.0, size=(n, 3, 3))
    configs = np.concatenate([good, bad])
    return configs, np.r_[np.ones(n), np.zeros(n)]


def test_forest_on_planted_corpus():
    configs, y = corpus()
    X = np.array([scoring_features(c) for c in configs])
    model = rf_train(X, y, ForestConfig(n_trees=30))
    assert model.oob_accuracy >= 0.9
    test, ty = corpus(seed=1, n=30)
    s = rf_score_many(model, test)
    assert np.all((s >= 0) & (s <= 1))
    assert s[ty == 1].mean() > s[ty == 0].mean()
    assert rf_score(model, test[0]) == s[0]


def test_permuting_trees_keeps_score():
    configs, y = corpus()
    X = np.array([scoring_features(c) for c in configs])
    model = rf_train(X, y, ForestConfig(n_trees=12))
    shuffled = RandomForestModel(model.trees[::-1], model.config, model.n_features)
    np.testing.assert_allclose(shuffled.predict_proba(X), model.predict_proba(X), atol=1e-15)


def test_determinism_and_json_roundtrip(tmp_path):
    configs, y = corpus()
    X = np.array([scoring_features(c) for c in configs])
    a = rf_train(X, y, ForestConfig(n_trees=8, seed=7))
    b = rf_train(X, y, ForestConfig(n_trees=8, seed=7))
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))
    save_forest(tmp_path / "f.json", a)
    c = load_forest(tmp_path / "f.json")
    np.testing.assert_array_equal(c.predict_proba(X), a.predict_proba(X))
    assert c.oob_accuracy == a.oob_accuracy
    with pytest.raises(DomainError):
        a.predict_proba(X[:, :3])
