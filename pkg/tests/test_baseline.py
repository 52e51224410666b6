from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifespan_tree.baseline import (
    EcocModel,
    dual_objective,
    kkt_residual,
    one_vs_one_coding,
    predict_ecoc,
    train_ecoc,
    train_svm,
    with_age,
)
from lifespan_tree.errors import DomainError, ValidationError

from oracles import grid_dual


def blobs(k=3, n=40, dim=124, sep=10.0, seed=0):
    r = np.random.default_rng(seed)
    centers = np.zeros((k, dim))
    for i in range(k):
        centers[i, i] = sep
    X = np.vstack([c + r.standard_normal((n, dim)) for c in centers])
    labels = np.repeat([f"c{i}" for i in range(k)], n)
    return X, labels, centers


class TestSvm:
    def test_two_point_analytic(self):
        m = train_svm(np.array([[-1.0], [1.0]]), np.array([-1, 1]), C=1e6)
        assert m.w[0] == pytest.approx(1.0, abs=1e-6)
        assert m.b == pytest.approx(0.0, abs=1e-6)
        assert 2 / np.linalg.norm(m.w) == pytest.approx(2.0, abs=1e-6)
        np.testing.assert_allclose(m.decision_function(np.array([[0.3], [-2.0]])), [0.3, -2.0], atol=1e-6)

    def test_dual_against_grid(self):
        r = np.random.default_rng(3)
        X = r.normal(size=(6, 2))
        y = np.array([1, 1, 1, -1, -1, -1])
        X[y > 0] += 0.5
        m = train_svm(X, y, C=1.0)
        assert dual_objective(m.alpha, X, y) == pytest.approx(grid_dual(X, y, 1.0), abs=1e-3)

    def test_duplicated_data_same_boundary(self, rng):
        # separable with a hard margin: duplication only rescales the multipliers
        X = rng.normal(size=(40, 3))
        s = X[:, 0] + 0.3 * X[:, 1]
        X, y = X[np.abs(s) > 0.3], np.where(s[np.abs(s) > 0.3] > 0, 1, -1)
        a = train_svm(X, y, C=1e4)
        b = train_svm(np.vstack([X, X]), np.r_[y, y], C=1e4)
        np.testing.assert_allclose(b.w, a.w, atol=1e-3)
        Q = rng.normal(size=(200, 3))
        assert np.array_equal(a.predict(Q), b.predict(Q))

    def test_single_class(self):
        with pytest.raises(DomainError, match="single-class"):
            train_svm(np.zeros((3, 2)), np.ones(3))

    def test_iteration_cap_flag(self, rng):
        X = rng.normal(size=(200, 5))
        y = np.where(rng.random(200) < 0.5, 1, -1)
        m = train_svm(X, y, C=10.0, max_passes=1)
        assert not m.converged and m.kkt_gap > 1e-3 and m.n_iter == 200

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 10.0]))
    def test_feasibility_and_kkt(self, seed, C):
        r = np.random.default_rng(seed)
        X = r.normal(size=(30, 4))
        y = np.where(X[:, 0] + 0.5 * r.normal(size=30) > 0, 1, -1)
        if len(set(y)) < 2:
            y[0] = -y[0]
        m = train_svm(X, y, C=C)
        assert m.converged
        assert np.all(m.alpha >= 0) and np.all(m.alpha <= C)
        assert abs(m.alpha @ y) < 1e-6
        assert kkt_residual(m, X) < 1e-3
        np.testing.assert_allclose(m.w, (m.alpha * y) @ X, atol=1e-12)


class TestEcoc:
    @pytest.mark.parametrize("k,expected", [(3, 3), (7, 21)])
    def test_learner_count(self, k, expected):
        X, labels, _ = blobs(k=k, n=6, dim=k + 2)
        assert len(train_ecoc(X, labels).learners) == expected

    @given(st.integers(2, 9))
    def test_coding_matrix(self, k):
        M = one_vs_one_coding(k)
        assert M.shape == (k, k * (k - 1) // 2)
        assert np.all((M == 1).sum(axis=0) == 1) and np.all((M == -1).sum(axis=0) == 1)
        pairs = {tuple(sorted((int(np.flatnonzero(c == 1)[0]), int(np.flatnonzero(c == -1)[0])))) for c in M.T}
        assert pairs == set(combinations(range(k), 2))

    def test_training_accuracy_and_centers(self):
        X, labels, centers = blobs()
        model = train_ecoc(X, labels)
        pred = [predict_ecoc(model, x)[0][0] for x in X]
        assert np.mean(np.array(pred) == labels) == 1.0
        for i, c in enumerate(centers):
            ranking, scores = predict_ecoc(model, c)
            assert ranking[0] == f"c{i}"
            assert sorted(ranking) == ["c0", "c1", "c2"]
            assert set(scores) == set(ranking)

    def test_midpoint_tie(self):
        r = np.random.default_rng(0)
        X = np.vstack([r.normal(size=(20, 2)) + [-5, 0], r.normal(size=(20, 2)) + [5, 0]])
        X[20:] = -X[:20]  # exact mirror image
        model = train_ecoc(X, np.repeat(["L", "R"], 20))
        ranking, scores = predict_ecoc(model, np.zeros(2))
        assert scores["L"] == pytest.approx(scores["R"], abs=1e-3)
        assert ranking == predict_ecoc(model, np.zeros(2))[0]

    def test_too_few_in_class(self):
        X, labels, _ = blobs(n=5, dim=4)
        labels = labels.astype(object)
        labels[0] = "lonely"
        with pytest.raises(ValidationError, match="lonely"):
            train_ecoc(X, labels)

    def test_zero_column_invariance(self):
        X, labels, _ = blobs(n=20, dim=6)
        a = train_ecoc(X, labels)
        b = train_ecoc(np.column_stack([X, np.zeros(len(X))]), labels)
        Q = np.random.default_rng(5).normal(0, 5, size=(50, 6))
        assert [predict_ecoc(a, q)[0] for q in Q] == [
            predict_ecoc(b, np.r_[q, 0.0])[0] for q in Q
        ]

    def test_relabel_permutation(self):
        X, labels, _ = blobs(n=20, dim=6)
        rename = {"c0": "z", "c1": "x", "c2": "y"}
        a = train_ecoc(X, labels)
        b = train_ecoc(X, np.array([rename[l] for l in labels]))
        Q = np.random.default_rng(6).normal(0, 5, size=(20, 6))
        for q in Q:
            sa, sb = predict_ecoc(a, q)[1], predict_ecoc(b, q)[1]
            for k, v in rename.items():
                assert sa[k] == pytest.approx(sb[v], abs=1e-9)

    def test_json_roundtrip(self, tmp_path):
        X, labels, _ = blobs(n=10, dim=5)
        model = train_ecoc(X, labels)
        p = tmp_path / "e.json"
        model.save(p)
        back = EcocModel.load(p)
        np.testing.assert_array_equal(back.scores(X), model.scores(X))
        assert back.labels == model.labels

    def test_with_age(self):
        Z = np.zeros((3, 2))
        assert with_age(Z, [50, 60, 70]).shape == (3, 3)
