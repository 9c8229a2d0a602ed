import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit
from sklearn.tree import DecisionTreeRegressor

from noveltx.learners import ForestParams, logistic_fit, mse, rf_predict, rf_train, select_features
from noveltx.learners.forest import ForestModel
from oracles import newton_oracle

SMALL = ForestParams(n_trees=20)


# ---------------------------------------------------------------- mse

def test_mse_examples():
    assert mse([1, 2], [1, 2]) == 0.0
    assert mse([0, 0], [1, 1]) == 1.0
    assert mse([0.2, 0.8], [0, 1]) == pytest.approx(0.04, abs=1e-15)


def test_mse_rejects_length_mismatch():
    with pytest.raises(ValueError):
        mse([1, 2], [1])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(-10, 10))
def test_mse_shift_invariance_and_symmetry(xs, c):
    a = np.array(xs)
    b = a[::-1].copy()
    assert mse(a, b) == mse(b, a)
    assert mse(a, a) == 0.0
    assert mse(a + c, b + c) == pytest.approx(mse(a, b), rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------- forest

def test_constant_target_predicts_constant():
    X = np.random.default_rng(0).normal(size=(50, 3))
    m = rf_train(X, np.full(50, 0.25), SMALL, seed=1)
    assert np.all(rf_predict(m, X) == 0.25)


def test_forest_is_deterministic():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(80, 4)), rng.normal(size=80)
    a = rf_predict(rf_train(X, y, SMALL, seed=3), X)
    b = rf_predict(rf_train(X, y, SMALL, seed=3), X)
    assert np.array_equal(a, b)
    c = rf_predict(rf_train(X, y, SMALL, seed=4), X)
    assert not np.array_equal(a, c)


def test_forest_beats_mean_predictor_on_linear_signal():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(200, 3))
    y = 3 * X[:, 0]
    m = rf_train(X, y, SMALL, seed=0)
    assert mse(rf_predict(m, X), y) < mse(np.full(200, y.mean()), y)


def test_empty_prediction_and_duplicate_rows():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(40, 2)), rng.normal(size=40)
    m = rf_train(X, y, SMALL, seed=0)
    assert rf_predict(m, np.empty((0, 2))).shape == (0,)
    p = rf_predict(m, np.vstack([X[:1], X[:1]]))
    assert p[0] == p[1]


def test_single_tree_matches_its_leaf_value():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    m = rf_train(X, y, ForestParams(n_trees=1), seed=0)
    tree = m.trees[0]
    assert np.array_equal(rf_predict(m, X), tree.predict(X))


@pytest.mark.parametrize("seed", range(5))
def test_exact_greedy_tree_matches_sklearn(seed):
    # No bootstrap and all features at every node, so the tree is fully
    # determined up to gain ties. Ties (two features inducing the same row
    # partition) only happen in tiny nodes, so leaves hold at least 10 rows.
    # sklearn casts X to float32: use float32-exact inputs.
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(300, 4)).astype(np.float32).astype(float)
    y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=300)
    params = ForestParams(n_trees=1, colsample_bynode=1.0, bootstrap=False, max_depth=4,
                          min_child_weight=10)
    ours = rf_predict(rf_train(X, y, params, seed=0), X)
    ref = DecisionTreeRegressor(max_depth=4, min_samples_leaf=10, random_state=0).fit(X, y)
    Xt = rng.normal(size=(200, 4)).astype(np.float32).astype(float)
    assert np.allclose(ours, ref.predict(X), atol=1e-12)
    assert np.allclose(rf_predict(rf_train(X, y, params, seed=0), Xt), ref.predict(Xt), atol=1e-12)


def test_forest_invariant_under_tree_reordering():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
    m = rf_train(X, y, SMALL, seed=0)
    trees = m.trees
    perm = [trees[i] for i in rng.permutation(len(trees))]
    m2 = ForestModel.from_trees(perm, m.params, m.seed, m.feature_names, m.importances)
    assert np.allclose(rf_predict(m2, X), rf_predict(m, X), rtol=0, atol=1e-12)


def test_forest_json_round_trip():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
    m = rf_train(X, y, SMALL, seed=0)
    m2 = ForestModel.from_json(m.to_json())
    assert np.array_equal(rf_predict(m2, X), rf_predict(m, X))


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        rf_train(np.array([[np.nan, 1.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
    m = rf_train(np.eye(3), np.arange(3.0), SMALL)
    with pytest.raises(ValueError):
        rf_predict(m, np.ones((2, 4)))


# ---------------------------------------------------------------- feature selection

def test_select_all_columns_keeps_order():
    X = np.random.default_rng(0).normal(size=(20, 4))
    assert select_features(X, X[:, 0], k=4) == [0, 1, 2, 3]


def test_select_constant_target_takes_first_k():
    X = np.random.default_rng(0).normal(size=(30, 6))
    assert select_features(X, np.zeros(30), k=3, params=SMALL) == [0, 1, 2]


@pytest.mark.parametrize("seed", range(10))
def test_planted_feature_ranked_first(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 31))
    y = 2.0 * X[:, 5] + 0.1 * rng.normal(size=150)
    assert select_features(X, y, k=20, params=SMALL, seed=seed)[0] == 5


# ---------------------------------------------------------------- logistic

def test_logistic_degenerate_outcome_flagged():
    fit = logistic_fit(np.column_stack([np.ones(5), np.arange(5.0)]), np.ones(5))
    assert not fit.converged
    assert "degenerate" in fit.diagnostic


def test_logistic_symmetric_two_points():
    x = np.tile([-1.0, 1.0], 50)
    y = np.tile([0.0, 1.0], 50)
    # add a few flipped labels so the MLE is finite; symmetry keeps intercept at 0
    x = np.concatenate([x, [-1.0, 1.0]])
    y = np.concatenate([y, [1.0, 0.0]])
    fit = logistic_fit(np.column_stack([np.ones_like(x), x]), y)
    assert fit.converged
    assert abs(fit.coefficients[0]) < 1e-10
    assert fit.coefficients[1] > 0
    beta, _ = newton_oracle(x, y)
    assert fit.coefficients[1] == pytest.approx(beta[1], abs=1e-8)


def test_logistic_separation_flagged():
    x = np.tile([-1.0, 1.0], 50)
    y = np.tile([0.0, 1.0], 50)
    fit = logistic_fit(np.column_stack([np.ones_like(x), x]), y)
    assert not fit.converged
    assert "separation" in fit.diagnostic
    assert fit.coefficients[1] > 0


def test_logistic_matches_newton_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(30, 200))
        x = rng.normal(size=n) * rng.uniform(0.5, 3)
        y = (rng.random(n) < expit(rng.normal() + rng.normal() * x)).astype(float)
        if y.min() == y.max():
            continue
        fit = logistic_fit(np.column_stack([np.ones(n), x]), y)
        beta, se = newton_oracle(x, y)
        if not fit.converged:
            continue
        assert np.allclose(fit.coefficients, beta, atol=1e-4)
        assert np.allclose(fit.std_errors, se, atol=1e-4)


def test_logistic_permutation_null():
    rng = np.random.default_rng(12)
    x = rng.normal(size=120)
    y = (rng.random(120) < 0.5).astype(float)
    nonsig = 0
    for _ in range(100):
        fit = logistic_fit(np.column_stack([np.ones(120), x]), rng.permutation(y))
        nonsig += fit.p_values[1] > 0.05
    assert nonsig >= 90


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 10_000))
def test_logistic_z_invariant_under_affine_rescaling(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=80)
    y = (rng.random(80) < expit(0.8 * x)).astype(float)
    if y.min() == y.max():
        return
    f1 = logistic_fit(np.column_stack([np.ones(80), x]), y)
    f2 = logistic_fit(np.column_stack([np.ones(80), a * x + b]), y)
    if not (f1.converged and f2.converged):
        return
    assert f2.z_values[1] == pytest.approx(f1.z_values[1], abs=1e-6)
    assert f2.coefficients[1] == pytest.approx(f1.coefficients[1] / a, rel=1e-6, abs=1e-9)
