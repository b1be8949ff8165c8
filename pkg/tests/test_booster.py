import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from takeover import booster as B
from takeover.dataset import DEFAULT_SCHEMA, Dataset, GeneratorSpec, synthesize
from takeover.errors import BoosterError

from conftest import continuous_schema


def _data(seed=0, n=120, m=3, noise=0.1, missing=0.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(n, m))
    y = 1 + np.where(X[:, 0] > 5, 2.0, 0.0) + 0.3 * X[:, 1] + rng.normal(0, noise, n)
    X[rng.random((n, m)) < missing] = np.nan
    return Dataset(continuous_schema(m), X, np.maximum(y, 0.01))


def test_leaf_weight_and_gain_examples():
    assert B.leaf_weight(-4.0, 3.0, 1.0) == 1.0
    assert B.split_gain(-2.0, 1.0, 2.0, 1.0, 0.0, 0.0) == 4.0
    assert B.split_gain(-2.0, 1.0, 2.0, 1.0, 0.0, 1.5) == 2.5
    # lambda shrinks both the weight and the gain
    assert B.leaf_weight(-4.0, 3.0, 5.0) == 0.5
    assert B.split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0) == 2.0
    with pytest.raises(BoosterError):
        B.leaf_weight(1.0, 0.0, 0.0)


def test_hyperparams_validation_and_round_trip():
    p = B.Hyperparams(n_estimators=7, learning_rate=0.2, seed=3)
    assert B.Hyperparams.from_dict(p.to_dict()) == p
    for bad in ({"learning_rate": 0.0}, {"subsample": 1.5}, {"max_depth": -1}, {"reg_lambda": -1}):
        with pytest.raises(BoosterError):
            B.Hyperparams(**bad)
    with pytest.raises(BoosterError, match="unknown"):
        B.Hyperparams.from_dict({"eta": 0.3})


def test_zero_trees_predicts_target_mean():
    d = _data()
    m = B.train(d, B.Hyperparams(n_estimators=0))
    assert m.trees == ()
    np.testing.assert_allclose(B.predict_many(m, d.X), d.y.mean(), rtol=0, atol=1e-15)


def test_hand_built_stump():
    stump = B.Split(0, 0.5, True, B.Leaf(-1.0, 10), B.Leaf(1.0, 10), 20)
    m = B.Ensemble(0.0, (stump,), "", B.Hyperparams())
    assert B.predict(m, [0.7]) == 1.0
    assert B.predict(m, [0.2]) == -1.0
    assert B.predict(m, [None]) == -1.0


def _naive_stump(X, y, lam):
    """Exhaustive first split of squared error with unit hessians, no missing values."""
    g = y.mean() - y
    G, H = g.sum(), float(len(y))
    best = (-math.inf, None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = 0.5 * (lo + hi)
            left = X[:, f] < t
            gl, hl = g[left].sum(), float(left.sum())
            gain = B.split_gain(gl, hl, G - gl, H - hl, lam, 0.0)
            if gain > best[0] + 1e-12:
                best = (gain, f, t)
    return best


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_first_split_matches_exhaustive_search(seed, lam):
    rng = np.random.default_rng(seed)
    X = np.round(rng.uniform(0, 5, size=(30, 3)), 1)
    y = rng.uniform(0.5, 5, size=30)
    d = Dataset(continuous_schema(3), X, y)
    m = B.train(d, B.Hyperparams(n_estimators=1, max_depth=1, learning_rate=1.0, reg_lambda=lam, min_child_weight=0))
    gain, f, t = _naive_stump(X, y, lam)
    root = m.trees[0]
    assert isinstance(root, B.Split)
    assert (root.feature, root.threshold) == (f, pytest.approx(t))
    g = y.mean() - y
    left = X[:, f] < t
    assert root.left.weight == pytest.approx(B.leaf_weight(g[left].sum(), left.sum(), lam), abs=1e-12)


def _check_covers(node):
    if isinstance(node, B.Split):
        assert node.cover == pytest.approx(node.left.cover + node.right.cover)
        _check_covers(node.left)
        _check_covers(node.right)


def test_covers_are_consistent_and_root_is_row_count():
    d = _data(missing=0.2)
    m = B.train(d, B.Hyperparams(n_estimators=20, max_depth=4, subsample=0.7, colsample_bytree=0.67))
    for t in m.trees:
        _check_covers(t)
        assert t.cover == round(0.7 * len(d))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.integers(1, 5))
def test_training_loss_never_increases_with_full_sampling(seed, lr, depth):
    d = _data(seed, n=80, missing=0.1)
    m = B.train(d, B.Hyperparams(n_estimators=25, learning_rate=lr, max_depth=depth))
    curve = B.training_rmse_curve(m, d)
    assert np.all(np.diff(curve) <= 1e-12)


def test_huge_lambda_collapses_to_mean():
    d = _data()
    m = B.train(d, B.Hyperparams(n_estimators=10, reg_lambda=1e9))
    np.testing.assert_allclose(B.predict_many(m, d.X), d.y.mean(), atol=1e-5)


def test_huge_gamma_prevents_splits():
    d = _data()
    m = B.train(d, B.Hyperparams(n_estimators=5, reg_gamma=1e6))
    assert all(isinstance(t, B.Leaf) for t in m.trees)


def test_missing_value_follows_default_direction():
    d = _data(missing=0.25)
    m = B.train(d, B.Hyperparams(n_estimators=15, max_depth=3))
    x = np.array([[np.nan, 3.0, 7.0]])
    leaf_nan = [t.leaf_index(x)[0] for t in m.flat_trees]
    manual = []
    for t in m.flat_trees:
        i = 0
        while not t.is_leaf(i):
            v = x[0, t.feature[i]]
            go_left = t.default_left[i] if math.isnan(v) else v < t.threshold[i]
            i = t.left[i] if go_left else t.right[i]
        manual.append(i)
    assert leaf_nan == manual


def test_missingness_learned_when_informative():
    rng = np.random.default_rng(1)
    n = 300
    x = rng.uniform(0, 1, n)
    miss = rng.random(n) < 0.3
    y = np.where(miss, 5.0, 1.0 + x)
    X = np.where(miss, np.nan, x)[:, None]
    d = Dataset(continuous_schema(1), X, y)
    m = B.train(d, B.Hyperparams(n_estimators=100, learning_rate=0.3, max_depth=2))
    assert B.predict(m, [None]) == pytest.approx(5.0, abs=0.05)


def test_json_round_trip_is_bit_exact():
    d = _data(missing=0.1)
    m = B.train(d, B.Hyperparams(n_estimators=30, subsample=0.8, seed=5))
    back = B.loads(B.dumps(m))
    assert B.dumps(back) == B.dumps(m)
    np.testing.assert_array_equal(B.predict_many(back, d.X), B.predict_many(m, d.X))
    doc = json.loads(B.dumps(m))
    assert set(doc) >= {"base_score", "params", "schema_fingerprint", "trees"}


def test_malformed_model_document():
    with pytest.raises(BoosterError, match="base_score"):
        B.Ensemble.from_dict({"trees": []})


def test_training_is_deterministic_per_seed():
    d = _data(missing=0.1)
    p = B.Hyperparams(n_estimators=20, subsample=0.7, colsample_bytree=0.67, seed=11)
    assert B.dumps(B.train(d, p)) == B.dumps(B.train(d, p))
    q = B.Hyperparams(n_estimators=20, subsample=0.7, colsample_bytree=0.67, seed=12)
    assert B.dumps(B.train(d, p)) != B.dumps(B.train(d, q))


def test_arity_checked():
    d = _data()
    m = B.train(d, B.Hyperparams(n_estimators=3))
    with pytest.raises(BoosterError, match="expects 3"):
        B.predict(m, [1.0, 2.0])


def test_noiseless_generator_fits_tightly():
    spec = GeneratorSpec(intercept=1.0, offsets={"URG": {0: 1.0, 1: 0.3, 2: -0.5}, "HAND": {1: 0.4}}, n_rows=300)
    d, _ = synthesize(DEFAULT_SCHEMA, spec, 0)
    m = B.train(d, B.Hyperparams(n_estimators=300, learning_rate=0.5, max_depth=2))
    assert B.training_rmse_curve(m, d)[-1] < 1e-3


def test_training_rejects_degenerate_data():
    d = _data()
    with pytest.raises(BoosterError):
        B.train(d.subset(np.array([0])))
