import json
import math

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import binom, norm

from gcnet.classifiers import (
    LDA, MLP, POOL_ORDER, QDA, Classifier, DecisionTree, GaussianNB, LabeledDataset, MajorityClass,
    RandomForest, classify, make_member, score_accuracy, train_member, train_pool, train_qda,
)
from gcnet.errors import ContractError, DegenerateTrainingError


def gaussians(n_per_class, f, shift, rng, scale0=1.0, scale1=1.0):
    X = np.vstack([
        rng.normal(-shift, scale0, (n_per_class, f)),
        rng.normal(shift, scale1, (n_per_class, f)),
    ])
    y = np.repeat([0, 1], n_per_class)
    return LabeledDataset(X, y)


def qda_oracle(x, means, covs, priors):
    """Quadratic discriminant evaluated literally with a dense inverse and determinant."""
    scores = []
    for mu, cov, p in zip(means, covs, priors):
        d = x - mu
        scores.append(-0.5 * math.log(np.linalg.det(cov)) - 0.5 * d @ np.linalg.inv(cov) @ d + math.log(p))
    return int(scores[1] > scores[0])


class _Fixed(Classifier):
    kind = "FIXED"

    def __init__(self, scores):
        self.n_features = 1
        self.standardizer = lambda X: X
        self.fixed = np.asarray(scores, float)

    def _scores(self, Z):
        return np.tile(self.fixed, (len(Z), 1))


class TestDataset:
    def test_validation(self):
        with pytest.raises(ContractError):
            LabeledDataset(np.zeros((3, 2)), [0, 1])
        with pytest.raises(ContractError):
            LabeledDataset(np.zeros((2, 2)), [0, 2])
        with pytest.raises(ContractError):
            LabeledDataset(np.array([[np.nan, 1.0]]), [0])


class TestQda:
    def test_separated_gaussians(self):
        rng = np.random.default_rng(0)
        train = gaussians(500, 5, 3.0, rng)
        test = gaussians(1000, 5, 3.0, rng)
        # Bayes error for means +-3*1 in 5-d: Phi(-|mu1 - mu0| / 2) = Phi(-3 * sqrt(5))
        bayes = norm.cdf(-3.0 * math.sqrt(5))
        assert bayes < 1e-10
        assert score_accuracy(train_qda(train), test) >= 0.99

    def test_class_mean_maximizes_its_discriminant(self):
        means = np.array([[0.0, 0.0], [2.0, 1.0]])
        model = QDA.from_parameters(means, [np.eye(2), np.eye(2)], [0.5, 0.5])
        scores = model.decision_function(means)
        assert scores[0, 0] > scores[0, 1] and scores[1, 1] > scores[1, 0]
        assert scores[0, 0] == pytest.approx(math.log(0.5), abs=1e-5)

    def test_spherical_decision_regions(self):
        f = 2
        means = np.zeros((2, f))
        covs = [np.eye(f), 4.0 * np.eye(f)]
        model = QDA.from_parameters(means, covs, [0.5, 0.5])
        grid = np.stack(np.meshgrid(np.linspace(-4, 4, 61), np.linspace(-4, 4, 61)), -1).reshape(-1, 2)
        pred = model.predict(grid)
        oracle = np.array([qda_oracle(x, means, covs, [0.5, 0.5]) for x in grid])
        np.testing.assert_array_equal(pred, oracle)
        # boundary radius solves r^2 (1 - 1/4) / 2 = f log(4) / 2
        radius = math.sqrt(f * math.log(4.0) / 0.75)
        r = np.linalg.norm(grid, axis=1)
        assert np.all(pred[r < radius - 1e-9] == 0)
        assert np.all(pred[r > radius + 1e-9] == 1)

    def test_learned_parameters_match_sample_statistics(self):
        rng = np.random.default_rng(1)
        data = gaussians(80, 3, 1.0, rng, 1.0, 2.0)
        model = train_qda(data)
        Z = model.standardizer(data.X)
        np.testing.assert_allclose(model.means[1], Z[data.y == 1].mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(model.covariances[0], np.cov(Z[data.y == 0], rowvar=False), rtol=1e-12)
        np.testing.assert_allclose(model.priors, [0.5, 0.5])
        assert model.ridge == [1e-6, 1e-6]

    def test_matches_literal_formula_on_random_points(self):
        rng = np.random.default_rng(2)
        data = gaussians(60, 3, 0.5, rng, 1.0, 1.7)
        model = train_qda(data)
        covs = [c + 1e-6 * np.trace(c) / 3 * np.eye(3) for c in model.covariances]
        Z = model.standardizer(rng.normal(0, 2, (200, 3)))
        oracle = [qda_oracle(z, model.means, covs, model.priors) for z in Z]
        np.testing.assert_array_equal(model._scores(Z).argmax(axis=1), oracle)

    def test_singular_covariance_is_regularized(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=(40, 2))
        X = np.column_stack([base, base[:, 0], np.ones(40)])
        y = np.arange(40) % 2
        model = train_qda(LabeledDataset(X, y))
        assert all(r >= 1e-6 for r in model.ridge)
        assert np.all(np.isfinite(model.decision_function(X)))

    def test_single_class_is_degenerate(self):
        data = LabeledDataset(np.random.default_rng(0).normal(size=(10, 2)), np.ones(10, int))
        with pytest.raises(DegenerateTrainingError):
            train_qda(data)

    def test_shared_covariance_equals_lda(self):
        rng = np.random.default_rng(4)
        data = gaussians(100, 3, 0.4, rng, 1.0, 1.5)
        grid = rng.normal(0, 3, (2000, 3))
        shared = QDA(shared_covariance=True).fit(data)
        lda = LDA().fit(data)
        np.testing.assert_array_equal(shared.predict(grid), lda.predict(grid))


class TestClassify:
    def test_argmax(self):
        assert classify(_Fixed([-1.2, -0.7]), np.zeros(1)) == 1

    def test_tie_goes_to_class_zero(self):
        assert classify(_Fixed([-0.5, -0.5]), np.zeros(1)) == 0
        model = QDA.from_parameters([[0.0], [0.0]], [np.eye(1), np.eye(1)], [0.5, 0.5])
        assert classify(model, np.array([0.3])) == 0

    def test_dimension_mismatch(self):
        model = train_qda(gaussians(20, 3, 1.0, np.random.default_rng(0)))
        with pytest.raises(ContractError):
            classify(model, np.zeros(4))
        with pytest.raises(ContractError):
            classify(model, np.zeros((2, 3)))

    def test_degenerate_fallback_predicts_majority(self):
        X = np.random.default_rng(0).normal(size=(9, 2))
        model = train_member("QDA", LabeledDataset(X, np.ones(9, int)))
        assert isinstance(model, MajorityClass) and model.degenerate and model.kind == "QDA"
        assert classify(model, np.array([100.0, -100.0])) == 1

    def test_pure_function(self):
        model = train_qda(gaussians(20, 2, 1.0, np.random.default_rng(0)))
        x = np.array([0.1, -0.2])
        assert classify(model, x) == classify(model, x.copy())


class TestPool:
    def test_pool_order_and_kinds(self):
        pool = train_pool(gaussians(50, 3, 1.0, np.random.default_rng(0)))
        assert [m.kind for m in pool] == list(POOL_ORDER)
        assert not any(m.degenerate for m in pool)

    def test_degenerate_members_are_flagged(self):
        X = np.random.default_rng(0).normal(size=(12, 3))
        pool = train_pool(LabeledDataset(X, np.zeros(12, int)))
        assert [m.kind for m in pool] == list(POOL_ORDER)
        for m in pool:
            assert m.predict(X).tolist() == [0] * 12

    def test_lda_on_separable_data(self):
        rng = np.random.default_rng(5)
        w = np.array([1.0, -2.0, 0.5])
        X = rng.normal(size=(600, 3))
        margin = X @ w
        keep = np.abs(margin) > 0.5
        X, y = X[keep], (margin[keep] > 0).astype(int)
        # separability oracle: find (v, b) with y_i (v.x_i + b) >= 1 by linear programming
        signs = 2 * y - 1
        A = -signs[:, None] * np.column_stack([X, np.ones(len(X))])
        res = linprog(np.zeros(4), A_ub=A, b_ub=-np.ones(len(X)), bounds=[(None, None)] * 4)
        assert res.status == 0
        train, test = LabeledDataset(X[:300], y[:300]), LabeledDataset(X[300:], y[300:])
        assert score_accuracy(LDA().fit(train), test) == 1.0

    def test_permuted_labels_give_chance(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(2000, 5))
        y = rng.permutation(np.repeat([0, 1], 1000))
        train, test = LabeledDataset(X[:1000], y[:1000]), LabeledDataset(X[1000:], y[1000:])
        lo, hi = binom.ppf([0.0005, 0.9995], 1000, 0.5) / 1000
        assert 0.4 <= lo and hi <= 0.6
        for model in train_pool(train, seed=1):
            assert 0.4 <= score_accuracy(model, test) <= 0.6, model.kind

    def test_same_seed_same_predictions(self):
        rng = np.random.default_rng(7)
        data = gaussians(60, 4, 0.3, rng)
        grid = rng.normal(size=(300, 4))
        for kind in ("RFOREST", "MLP"):
            a = make_member(kind, seed=3).fit(data).predict(grid)
            b = make_member(kind, seed=3).fit(data).predict(grid)
            np.testing.assert_array_equal(a, b)
        a = RandomForest(seed=3).fit(data).decision_function(grid)
        b = RandomForest(seed=4).fit(data).decision_function(grid)
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("kind", POOL_ORDER)
    def test_affine_rescaling_invariance(self, kind):
        rng = np.random.default_rng(8)
        data = gaussians(80, 3, 0.5, rng, 1.0, 1.5)
        grid = rng.normal(0, 2, (400, 3))
        scale = np.array([4.0, 0.25, 8.0])
        shift = np.array([0.0, 0.0, 0.0])
        base = make_member(kind, seed=2).fit(data).predict(grid)
        moved = make_member(kind, seed=2).fit(LabeledDataset(data.X * scale + shift, data.y))
        np.testing.assert_array_equal(moved.predict(grid * scale + shift), base)

    @pytest.mark.parametrize("kind", ("DTREE", "RFOREST", "QDA", "LDA", "NB"))
    def test_affine_rescaling_with_shift(self, kind):
        rng = np.random.default_rng(9)
        data = gaussians(80, 3, 0.5, rng)
        grid = rng.normal(0, 2, (400, 3))
        scale, shift = np.array([3.0, 0.1, 7.0]), np.array([100.0, -5.0, 0.3])
        base = make_member(kind, seed=2).fit(data).decision_function(grid)
        moved = make_member(kind, seed=2).fit(LabeledDataset(data.X * scale + shift, data.y))
        np.testing.assert_allclose(moved.decision_function(grid * scale + shift), base, rtol=1e-6, atol=1e-6)

    def test_tree_learns_axis_aligned_rule(self):
        rng = np.random.default_rng(10)
        X = rng.uniform(-1, 1, (400, 2))
        y = ((X[:, 0] > 0.3) ^ (X[:, 1] < -0.2)).astype(int)
        data = LabeledDataset(X, y)
        assert score_accuracy(DecisionTree().fit(data), data) == 1.0

    def test_mlp_and_nb_learn_a_linear_rule(self):
        rng = np.random.default_rng(11)
        train = gaussians(200, 2, 1.5, rng)
        test = gaussians(500, 2, 1.5, rng)
        assert score_accuracy(MLP(seed=0).fit(train), test) > 0.95
        assert score_accuracy(GaussianNB().fit(train), test) > 0.95

    def test_models_dump_to_json(self):
        data = gaussians(30, 2, 1.0, np.random.default_rng(0))
        for model in train_pool(data):
            json.dumps(model.to_dict())


class TestScoreAccuracy:
    def test_examples(self):
        model = _Fixed([0.0, 1.0])
        X = np.zeros((4, 1))
        assert score_accuracy(model, LabeledDataset(X, [1, 1, 1, 1])) == 1.0
        assert score_accuracy(model, LabeledDataset(X, [0, 0, 0, 0])) == 0.0
        assert score_accuracy(model, LabeledDataset(X, [1, 1, 1, 0])) == 0.75

    def test_empty(self):
        with pytest.raises(ContractError):
            score_accuracy(_Fixed([0.0, 1.0]), LabeledDataset(np.zeros((0, 1)), []))
