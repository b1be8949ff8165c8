import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from takeover import booster as B, explain as E
from takeover.dataset import DEFAULT_SCHEMA, MERGED_TIME_BUDGET, CONTINUOUS, Dataset, GeneratorSpec, VariableSpec, preprocess, synthesize
from takeover.errors import ExplainError

from conftest import random_ensemble, random_instances

L, S = B.Leaf, B.Split


def _model(trees, m, base=0.0):
    return B.Ensemble(base, tuple(trees), "", B.Hyperparams(), tuple(f"x{j}" for j in range(m)))


# Two trees over three features. Coalition values enumerated by hand with exact
# fractions give v(empty) = 13/5 and phi = (17/20, -1/5, -1/4) at x = (0.7, 0.2, 0.9).
TREE_A = S(0, 0.5, True, S(1, 0.5, True, L(1.0, 20), L(2.0, 40), 60), L(4.0, 40), 100)
TREE_B = S(2, 0.5, False, L(0.0, 50), S(0, 0.5, True, L(1.0, 25), L(-1.0, 25), 50), 100)
X_FIXED = [0.7, 0.2, 0.9]
PHI_FIXED = [0.85, -0.2, -0.25]


def test_conditional_expectation_cover_weighting():
    m = _model([S(0, 0.5, True, L(1.0, 40), L(3.0, 60), 100)], 1)
    assert E.conditional_expectation(m, [0.9], set()) == pytest.approx(2.2, abs=1e-15)
    assert E.conditional_expectation(m, [0.9], {0}) == 3.0


def test_full_coalition_equals_prediction():
    m = _model([TREE_A, TREE_B], 3, base=0.5)
    assert E.conditional_expectation(m, X_FIXED, {0, 1, 2}) == B.predict(m, X_FIXED)


def test_hand_enumerated_three_feature_model():
    m = _model([TREE_A, TREE_B], 3)
    for explainer in (E.brute_shap, E.tree_shap):
        a = explainer(m, X_FIXED)
        assert a.base_value == pytest.approx(2.6, abs=1e-12)
        np.testing.assert_allclose(a.phi, PHI_FIXED, atol=1e-12)
        assert a.output == pytest.approx(3.0, abs=1e-12)


def test_constant_model_has_zero_phi():
    m = _model([L(0.7, 50), S(1, 0.0, True, L(0.3, 20), L(0.3, 30), 50)], 3, base=1.0)
    a = E.tree_shap(m, [1.0, -2.0, None])
    assert a.base_value == pytest.approx(2.0)
    np.testing.assert_allclose(a.phi, 0.0, atol=1e-15)
    f = E.force_data(m, [1.0, -2.0, None])
    assert f.contributions == [] and f.output == pytest.approx(f.base_value)
    d = Dataset(tuple(VariableSpec(f"x{j}", CONTINUOUS, (), "") for j in range(3)), np.zeros((4, 3)), np.ones(4))
    g = E.global_importance(m, d)
    assert [n for n, _ in g.ranking] == ["x0", "x1", "x2"]
    assert all(s == 0 for _, s in g.ranking)


def test_stump_gives_all_credit_to_its_feature():
    m = _model([S(0, 0.5, True, L(1.0, 40), L(3.0, 60), 100)], 3)
    a = E.tree_shap(m, [0.1, 5.0, 5.0])
    assert a.phi[1] == 0.0 and a.phi[2] == 0.0
    assert a.phi[0] == pytest.approx(1.0 - 2.2, abs=1e-12)
    f = E.force_data(m, [0.1, 5.0, 5.0])
    assert [c[0] for c in f.contributions] == ["x0"]


def test_additive_model_has_no_interactions():
    trees = [S(0, 0.0, True, L(1.0, 30), L(-1.0, 70), 100), S(2, 0.5, False, L(0.5, 45), L(2.0, 55), 100),
             S(0, 1.0, True, S(0, -1.0, True, L(0.1, 10), L(0.2, 20), 30), L(0.4, 70), 100)]
    m = _model(trees, 3)
    X = random_instances(np.random.default_rng(0), 20, 3)
    inter = E.interaction_values(m, X)
    _, phi = E.shap_values(m, X)
    off = inter - np.einsum("nii->ni", inter)[:, :, None] * np.eye(3)
    np.testing.assert_allclose(off, 0.0, atol=1e-15)
    np.testing.assert_allclose(np.einsum("nii->ni", inter), phi, atol=1e-12)


def test_and_like_pair_interaction():
    # f = 1 only when x0 >= 0.5 and x1 >= 0.5; enumeration at (1, 1) gives a pair
    # effect of 1/4, split 1/8 per cell, and phi = 3/8 per feature.
    m = _model([S(0, 0.5, True, L(0.0, 50), S(1, 0.5, True, L(0.0, 25), L(1.0, 25), 50), 100)], 2)
    for method in (E.brute_interactions, E.interactions):
        v = method(m, [1.0, 1.0]).values
        np.testing.assert_allclose(v, [[0.25, 0.125], [0.125, 0.25]], atol=1e-15)


def test_null_player_and_interchangeable_players():
    # f is symmetric in x0 and x1 and the covers factorise with the same split
    # ratio for both, so the two features are interchangeable players; x2 is unused
    tree = S(0, 0.5, True, S(1, 0.5, True, L(0.0, 36), L(1.0, 24), 60), S(1, 0.5, True, L(1.0, 24), L(3.0, 16), 40), 100)
    m = _model([tree], 3)
    for v in (0.2, 0.9, None):
        a = E.tree_shap(m, [v, v, 7.0])
        assert a.phi[2] == 0.0
        assert a.phi[0] == pytest.approx(a.phi[1], abs=1e-15)


def test_missing_value_matches_default_path_instance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = random_ensemble(rng, 4, 3, 3)
        x = rng.normal(size=4)
        x[1] = np.nan
        # replace the missing cell by a value that follows the default branch at every split on it
        lefts = [t.default_left[i] for t in m.flat_trees for i in range(len(t.feature)) if t.feature[i] == 1]
        thresholds = [t.threshold[i] for t in m.flat_trees for i in range(len(t.feature)) if t.feature[i] == 1]
        if len(set(lefts)) > 1:
            continue
        y = x.copy()
        y[1] = (min(thresholds) - 1.0 if lefts[0] else max(thresholds) + 1.0) if thresholds else 0.0
        np.testing.assert_allclose(E.tree_shap(m, x).phi, E.tree_shap(m, y).phi, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4), st.integers(1, 4))
def test_fast_matches_enumeration(seed, m_features, n_trees, depth):
    rng = np.random.default_rng(seed)
    m = random_ensemble(rng, m_features, n_trees, depth)
    X = random_instances(rng, 5, m_features)
    base, phi = E.shap_values(m, X)
    inter = E.interaction_values(m, X)
    for i, x in enumerate(X):
        ref = E.brute_shap(m, x)
        assert base == pytest.approx(ref.base_value, abs=1e-10)
        np.testing.assert_allclose(phi[i], ref.phi, atol=1e-10)
        np.testing.assert_allclose(inter[i], E.brute_interactions(m, x).values, atol=1e-10)
        assert abs(base + phi[i].sum() - B.predict_many(m, x)[0]) < 1e-10
        np.testing.assert_allclose(inter[i], inter[i].T, atol=1e-12)
        np.testing.assert_allclose(inter[i].sum(axis=1), phi[i], atol=1e-12)


def test_base_value_is_training_mean_prediction():
    spec = GeneratorSpec(piecewise={"TBTC": ([2, 30], [0, 2])}, offsets={"URG": {0: 1.0}}, noise_sd=0.2, n_rows=150)
    d, _ = synthesize(DEFAULT_SCHEMA, spec, 0)
    m = B.train(d, B.Hyperparams(n_estimators=20))
    assert E.expected_value(m) == pytest.approx(B.predict_many(m, d.X).mean(), abs=1e-9)


def _merged_schema():
    return preprocess(synthesize(DEFAULT_SCHEMA, GeneratorSpec(n_rows=2), 0)[0]).schema


def test_single_active_variable_dominates_ranking():
    spec = GeneratorSpec(intercept=1.0, piecewise={MERGED_TIME_BUDGET: ([2, 30], [0, 3])}, noise_sd=0.05, n_rows=400)
    d, _ = synthesize(_merged_schema(), spec, 1)
    m = B.train(d, B.Hyperparams())
    ranking = E.global_importance(m, d).ranking
    assert ranking[0][0] == MERGED_TIME_BUDGET
    assert ranking[0][1] > 10 * ranking[1][1]


def test_planted_interaction_picks_colour_feature():
    spec = GeneratorSpec(
        intercept=2.0,
        offsets={"URG": {0: 0.6, 2: -0.6}},
        interactions=[("URG", 0, "TOR_V", 1, 1.2), ("URG", 2, "TOR_V", 0, 0.8)],
        noise_sd=0.1,
        n_rows=500,
    )
    d, _ = synthesize(DEFAULT_SCHEMA, spec, 2)
    m = B.train(d, B.Hyperparams(n_estimators=100, max_depth=3))
    recs = E.dependence_data(m, d, "URG")
    assert {r["color_feature"] for r in recs} == {"TOR_V"}
    assert len(recs) == len(d)
    for r in recs[:20]:
        assert r["feature"] == "URG"
    csv_text = E.dependence_csv(recs)
    assert csv_text.splitlines()[0] == ",".join(E.DEPENDENCE_COLUMNS)


def test_additive_dependence_main_effect_equals_total():
    trees = [S(0, 0.0, True, L(1.0, 30), L(-1.0, 70), 100), S(1, 0.5, False, L(0.5, 45), L(2.0, 55), 100)]
    m = _model(trees, 2)
    schema = tuple(VariableSpec(f"x{j}", CONTINUOUS, (), "") for j in range(2))
    d = Dataset(schema, np.random.default_rng(0).normal(size=(10, 2)), np.ones(10))
    for r in E.dependence_data(m, d, 0):
        assert r["color_interaction_mass"] == 0.0
        assert r["main_effect"] == pytest.approx(r["phi_total"], abs=1e-15)


def test_force_data_orders_by_magnitude():
    m = _model([TREE_A, TREE_B], 3)
    f = E.force_data(m, X_FIXED)
    assert [c[0] for c in f.contributions] == ["x0", "x2", "x1"]
    assert f.output == B.predict(m, X_FIXED)
    assert f.base_value + sum(c[2] for c in f.contributions) == pytest.approx(f.output, abs=1e-12)


def test_none_cells_and_errors():
    m = _model([TREE_A, TREE_B], 3)
    a = E.tree_shap(m, [None, 0.2, 0.9])
    assert math.isnan(a.instance[0])
    assert a.to_dict()["instance"][0] is None
    with pytest.raises(ExplainError):
        E.tree_shap(m, [[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    with pytest.raises(ExplainError):
        E.dependence_data(m, Dataset(tuple(VariableSpec(f"x{j}", CONTINUOUS, (), "") for j in range(3)), np.zeros((2, 3)), np.ones(2)), "nope")
    with pytest.raises(ExplainError):
        E.brute_shap(_model([TREE_A], 16), np.zeros(16))
