import numpy as np
import pytest

from hetdid.boosting import (
    FeatureBins,
    GradientBoostedClassifier,
    GradientBoostedRegressor,
)


class TestFeatureBins:
    def test_codes_match_raw_rule(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(500, 3))
        bins = FeatureBins(max_bins=16).fit(x)
        codes = bins.transform(x)
        for f in range(3):
            thr = bins.thresholds_[f]
            for t in range(thr.size):
                np.testing.assert_array_equal(codes[f] <= t, x[:, f] < thr[t])

    def test_constant_column_has_no_thresholds(self):
        x = np.column_stack([np.ones(20), np.arange(20.0)])
        bins = FeatureBins().fit(x)
        assert bins.thresholds_[0].size == 0
        assert bins.thresholds_[1].size == 19


class TestRegressor:
    def test_fits_step_function_exactly(self):
        x = np.linspace(-1, 1, 200).reshape(-1, 1)
        y = np.where(x[:, 0] > 0, 2.0, -1.0)
        model = GradientBoostedRegressor(n_rounds=50, learning_rate=0.5,
                                         max_depth=2).fit(x, y)
        pred = model.predict(x)
        assert np.max(np.abs(pred - y)) < 0.01

    def test_training_loss_non_increasing(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(400, 5))
        y = np.sin(x[:, 0]) + 0.5 * x[:, 1] ** 2 + rng.normal(0, 0.3, 400)
        model = GradientBoostedRegressor(n_rounds=80, learning_rate=0.2,
                                         max_depth=3).fit(x, y)
        path = model.train_loss_path_
        assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))

    def test_beats_constant_predictor(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(600, 4))
        y = x[:, 0] * (x[:, 1] > 0) + rng.normal(0, 0.1, 600)
        model = GradientBoostedRegressor(n_rounds=150, learning_rate=0.1,
                                         max_depth=3).fit(x, y)
        mse = np.mean((model.predict(x) - y) ** 2)
        assert mse < 0.25 * np.var(y)

    def test_train_code_predictions_match_raw_predictions(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(300, 3))
        y = x[:, 0] + rng.normal(0, 0.2, 300)
        model = GradientBoostedRegressor(n_rounds=20, max_depth=3).fit(x, y)
        booster = model.booster_
        codes = booster.bins_.transform(x)
        pred_codes = np.full(300, booster.init_value_)
        for tree in booster.trees_:
            pred_codes += booster.learning_rate * tree.predict_codes(codes)
        np.testing.assert_array_equal(pred_codes, model.predict(x))

    def test_early_stopping_truncates(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(400, 2))
        y = x[:, 0] + rng.normal(0, 1.0, 400)  # noisy: overfits quickly
        full = GradientBoostedRegressor(n_rounds=300, learning_rate=0.3,
                                        max_depth=3).fit(x, y)
        stopped = GradientBoostedRegressor(n_rounds=300, learning_rate=0.3,
                                           max_depth=3, patience=10, seed=1).fit(x, y)
        assert len(stopped.booster_.trees_) < len(full.booster_.trees_)

    def test_determinism(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(200, 3))
        y = rng.normal(size=200)
        a = GradientBoostedRegressor(n_rounds=30, seed=7).fit(x, y).predict(x)
        b = GradientBoostedRegressor(n_rounds=30, seed=7).fit(x, y).predict(x)
        np.testing.assert_array_equal(a, b)


class TestClassifier:
    def test_single_class_errors(self):
        with pytest.raises(ValueError, match="single class"):
            GradientBoostedClassifier().fit(np.zeros((10, 1)), np.zeros(10, dtype=int))

    def test_recovers_monotone_boundary(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(3000, 2))
        p = 1 / (1 + np.exp(-(2 * x[:, 0])))
        y = rng.binomial(1, p)
        model = GradientBoostedClassifier(n_rounds=100, learning_rate=0.2,
                                          max_depth=2).fit(x, y)
        pred = model.predict_proba(x)
        # calibrated in the gross sense: high where p high
        assert pred[p > 0.8].mean() > 0.7
        assert pred[p < 0.2].mean() < 0.3

    def test_probabilities_in_unit_interval(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(500, 2))
        y = (x[:, 0] > 0).astype(int)
        model = GradientBoostedClassifier(n_rounds=60).fit(x, y)
        p = model.predict_proba(x)
        assert np.all((p > 0) & (p < 1))
