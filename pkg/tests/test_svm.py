import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hep2cls import svm
from hep2cls.errors import ConvergenceError, DimensionError, ModelFormatError, ParameterError, TrainingError


def blobs(seed, n=30, d=2, sep=3.0):
    r = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = r.normal(size=(n, d)) + sep / 2 * y[:, None]
    return X, y


def test_two_point_problem():
    X = np.array([[-1.0], [1.0]])
    y = np.array([-1.0, 1.0])
    m = svm.train_binary_svm(X, y, C=10.0, kernel=0.5)
    assert svm.predict_binary(m, [-1.0]) == -1 and svm.predict_binary(m, [1.0]) == 1
    # symmetric problem: the boundary sits at the midpoint
    assert abs(svm.decision_score(m, [0.0])) < 1e-9
    assert svm.decision_score(m, [1.0]) == pytest.approx(-svm.decision_score(m, [-1.0]))


def test_separable_blobs_are_fit():
    X, y = blobs(0, sep=8.0)
    m = svm.train_binary_svm(X, y, C=1e3, kernel=0.1)
    assert np.all(svm.predict_binary(m, X) == y)
    assert np.all(svm.kkt_residuals(m, X, y) <= 1e-3 + 1e-9)


def test_zero_score_predicts_positive():
    X = np.array([[-1.0], [1.0]])
    m = svm.train_binary_svm(X, np.array([-1.0, 1.0]), C=10.0, kernel=0.5)
    m0 = svm.SvmModel(m.support_vectors, m.dual_coef * 0, 0.0, m.kernel, m.C)
    assert svm.decision_score(m0, [3.0]) == 0.0
    assert svm.predict_binary(m0, [3.0]) == 1
    assert list(svm.predict_binary(m0, np.zeros((2, 1)))) == [1, 1]


def test_training_errors():
    X, y = blobs(1)
    with pytest.raises(TrainingError):
        svm.train_binary_svm(X, np.ones_like(y), C=1.0, kernel=0.1)
    with pytest.raises(TrainingError):
        svm.train_binary_svm(X, np.where(y > 0, 2.0, -1.0), C=1.0, kernel=0.1)
    with pytest.raises(DimensionError):
        svm.train_binary_svm(X, y[:-1], C=1.0, kernel=0.1)
    with pytest.raises(ParameterError):
        svm.train_binary_svm(X, y, C=0.0, kernel=0.1)
    with pytest.raises(ParameterError):
        svm.KernelParams(-1.0)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ParameterError):
        svm.train_binary_svm(bad, y, C=1.0, kernel=0.1)


def test_iteration_cap_raises():
    X, y = blobs(2, n=40, sep=0.5)
    with pytest.raises(ConvergenceError):
        svm.train_binary_svm(X, y, C=1e3, kernel=0.1, max_iter=2)


def test_dimension_mismatch_at_predict():
    X, y = blobs(3)
    m = svm.train_binary_svm(X, y, C=1.0, kernel=0.1)
    with pytest.raises(DimensionError):
        svm.decision_score(m, np.zeros(3))


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(6, 24), st.sampled_from([0.5, 5.0, 50.0]),
       st.sampled_from([0.05, 0.5]))
def test_dual_matches_projected_gradient_oracle(seed, n, C, gamma):
    X, y = blobs(seed, n=n, sep=1.0)
    m = svm.train_binary_svm(X, y, C=C, kernel=gamma, tol=1e-5)
    alpha = np.zeros(n)
    alpha[m.sv_index] = np.abs(m.dual_coef)
    ours = svm.dual_objective(alpha, X, y, gamma)
    _, ref = oracles.qp_dual(X, y, C, gamma, iters=4000)
    # the oracle is feasible, so it bounds the optimum from below
    assert ours >= ref - 1e-6 * max(1.0, abs(ref))
    assert abs(ours - ref) <= 1e-3 * max(1.0, abs(ref))
    assert np.all(alpha >= 0) and np.all(alpha <= C * (1 + 1e-12))
    assert abs(alpha @ y) <= 1e-9 * max(1.0, C)
    assert np.all(svm.kkt_residuals(m, X, y) <= 1e-5 + 1e-9)


def test_grid_validation_and_order():
    g = svm.TrainGrid(C=(1e5, 1e3), gamma=(0.1, 0.01, 0.01))
    assert g.C == (1e3, 1e5) and g.gamma == (0.01, 0.1)
    assert g.cells()[0] == (1e3, 0.01) and g.cells()[-1] == (1e5, 0.1)
    for kw in ({"C": (10.0,)}, {"C": (1e10,)}, {"gamma": (0.5,)}, {"gamma": (1e-4,)}, {"C": ()}):
        with pytest.raises(ParameterError):
            svm.TrainGrid(**kw)


def test_grid_search_prefers_earliest_best_cell():
    X, y = blobs(4, n=40, sep=8.0)
    Xv, yv = blobs(5, n=20, sep=8.0)
    res = svm.grid_search(X, y, Xv, yv, svm.TrainGrid(C=(1e3, 1e4), gamma=(0.01, 0.1)))
    # perfectly separable: the first cell already scores 1.0 and wins ties
    assert res.accuracy == 1.0 and (res.C, res.gamma) == (1e3, 0.01)
    assert np.all(svm.predict_binary(res.model, Xv) == yv)


def test_grid_search_matches_direct_training():
    X, y = blobs(6, n=40, sep=1.5)
    Xv, yv = blobs(7, n=30, sep=1.5)
    grid = svm.TrainGrid(C=(1e3, 1e4), gamma=(0.001, 0.01))
    res = svm.grid_search(X, y, Xv, yv, grid)
    best = None
    for C, g in grid.cells():
        m = svm.train_binary_svm(X, y, C=C, kernel=g)
        acc = np.mean(svm.predict_binary(m, Xv) == yv)
        if best is None or acc > best[0]:
            best = (acc, C, g)
    assert (res.accuracy, res.C, res.gamma) == pytest.approx(best)
    with pytest.raises(TrainingError):
        svm.grid_search(X, y, Xv[:0], yv[:0], grid)


def test_balanced_metric():
    yt = np.array([1, 1, 1, -1])
    assert svm._score(yt, np.array([1, 1, 1, 1]), "accuracy") == 0.75
    assert svm._score(yt, np.array([1, 1, 1, 1]), "balanced") == 0.5
    with pytest.raises(ParameterError):
        svm._score(yt, yt, "f1")


def test_serialization_round_trip():
    X, y = blobs(8)
    m = svm.train_binary_svm(X, y, C=1e3, kernel=0.05)
    d = json.loads(json.dumps(svm.svm_to_dict(m)))
    m2 = svm.svm_from_dict(d)
    Xq = np.random.default_rng(0).normal(size=(50, 2))
    assert np.array_equal(svm.decision_score(m, Xq), svm.decision_score(m2, Xq))
    with pytest.raises(ModelFormatError):
        svm.svm_from_dict({**d, "version": 99})
    with pytest.raises(ModelFormatError):
        svm.svm_from_dict({**d, "dual_coef": d["dual_coef"][:-1]})
    with pytest.raises(ModelFormatError):
        svm.svm_from_dict({"format": "other"})


def test_training_is_deterministic():
    X, y = blobs(9, n=50, sep=1.0)
    a = svm.train_binary_svm(X, y, C=1e4, kernel=0.01)
    b = svm.train_binary_svm(X, y, C=1e4, kernel=0.01)
    assert np.array_equal(a.dual_coef, b.dual_coef) and a.bias == b.bias
