"""Tests for the SMO linear classifier."""

import numpy as np
import pytest

from bmdl.core.classifier import LinearModel, evaluate, fit_linear_svm, primal_objective, train_linear
from bmdl.core.errors import ClassifierError, PreconditionError
from bmdl.models.state import FeatureMatrix


def clusters(seed: int, n: int = 20, gap: float = 4.0, labels=(0, 1)) -> FeatureMatrix:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 3))
    X[:, 0] += np.where(y == 1, gap, -gap)
    return FeatureMatrix(theta_bar=X, sample_ids=[f"s{i}" for i in range(n)],
                         labels=np.where(y == 1, labels[1], labels[0]))


@pytest.mark.unit
class TestTraining:

    def test_separable_data(self):
        model = train_linear(clusters(0), C=10.0)
        assert model.converged
        assert evaluate(model, clusters(1)) == 1.0

    def test_duplicated_training_set_gives_same_solution(self):
        train = clusters(2, gap=1.0)
        doubled = FeatureMatrix(theta_bar=np.vstack([train.theta_bar, train.theta_bar]),
                                sample_ids=train.sample_ids * 2, labels=np.concatenate([train.labels] * 2))
        a = train_linear(train, C=1.0, tol=1e-9)
        b = train_linear(doubled, C=1.0, tol=1e-9)
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-4)
        assert primal_objective(a, train.theta_bar, train.labels) == pytest.approx(
            primal_objective(b, doubled.theta_bar, doubled.labels), abs=1e-6)

    def test_beats_zero_model(self):
        train = clusters(3, gap=0.5)
        model = train_linear(train, C=1.0)
        zero = LinearModel(weights=np.zeros(3), bias=0.0, C=1.0)
        assert primal_objective(model, train.theta_bar, train.labels) <= primal_objective(
            zero, train.theta_bar, train.labels) + 1e-9

    def test_arbitrary_label_values(self):
        model = train_linear(clusters(4, labels=(3, 7)), C=10.0)
        assert model.classes == (3, 7)
        assert set(model.predict(clusters(5).theta_bar)) <= {3, 7}

    def test_standardize_handles_constant_columns(self):
        train = clusters(6)
        train.theta_bar[:, 2] = 5.0
        model = train_linear(train, C=10.0, standardize=True)
        assert np.all(np.isfinite(model.weights))
        assert model.scale[2] == 1.0
        assert evaluate(model, train) == 1.0

    def test_iteration_cap_warns(self):
        model = train_linear(clusters(7, gap=0.2), C=100.0, max_iter=1)
        assert not model.converged
        assert model.warnings

    def test_signed_multipliers_stay_in_box(self):
        train = clusters(8, gap=0.5)
        y = np.where(train.labels == 1, 1.0, -1.0)
        w, b, iterations, converged = fit_linear_svm(train.theta_bar, y, C=2.0)
        assert converged and iterations > 0
        assert w.shape == (3,)


@pytest.mark.unit
class TestErrors:

    def test_one_class(self):
        features = FeatureMatrix(theta_bar=np.ones((4, 2)), sample_ids=list("abcd"), labels=np.zeros(4, dtype=int))
        with pytest.raises(ClassifierError):
            train_linear(features)

    def test_three_classes(self):
        features = FeatureMatrix(theta_bar=np.ones((3, 2)), sample_ids=list("abc"), labels=np.array([0, 1, 2]))
        with pytest.raises(ClassifierError):
            train_linear(features)

    def test_missing_labels(self):
        with pytest.raises(ClassifierError):
            train_linear(FeatureMatrix(theta_bar=np.ones((2, 2)), sample_ids=["a", "b"]))

    def test_nonpositive_C(self):
        with pytest.raises(ClassifierError):
            train_linear(clusters(0), C=0.0)

    def test_label_count_mismatch(self):
        model = train_linear(clusters(0))
        with pytest.raises(PreconditionError):
            evaluate(model, clusters(1), labels=[0, 1])

    def test_feature_count_mismatch(self):
        model = train_linear(clusters(0))
        with pytest.raises(PreconditionError):
            model.predict(np.ones((2, 5)))


@pytest.mark.unit
def test_zero_score_goes_to_positive_class():
    model = LinearModel(weights=np.zeros(2), bias=0.0, C=1.0, classes=(0, 1))
    np.testing.assert_array_equal(model.predict(np.ones((3, 2))), [1, 1, 1])
