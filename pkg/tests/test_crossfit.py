import numpy as np
import pytest

from hetdid import TwoPeriodView, cross_fit, cross_fit_arm
from hetdid.crossfit import CrossFitError, predict_nuisances_for
from hetdid.learners import LearnerSpec

RIDGE = LearnerSpec(kind="ridge", penalty=1.0)
LOGIT = LearnerSpec(kind="logistic")


def make_view(n=200, seed=0, p_treat=0.4):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, 3))
    d = rng.binomial(1, p_treat, n)
    if d.sum() < 5:
        d[:5] = 1
    if (1 - d).sum() < 5:
        d[-5:] = 0
    s = w[:, 0] + 0.5 * d + rng.normal(0, 0.1, n)
    return TwoPeriodView(w=w, x_cols=(0, 1), d=d, s=s,
                         source_unit=tuple(range(n)), w_names=("a", "b", "c"))


class TestCrossFit:
    def test_constant_control_outcome_gives_constant_ghat(self):
        view = make_view(120, seed=1)
        s = np.where(view.d == 1, 123.0, 5.0)
        view2 = TwoPeriodView(w=view.w.copy(), x_cols=view.x_cols, d=view.d.copy(),
                              s=s, source_unit=view.source_unit, w_names=view.w_names)
        nuis = cross_fit(view2, 4, RIDGE, LOGIT, clip=0.01, seed=0)
        np.testing.assert_allclose(nuis.g_hat, 5.0, atol=1e-8)

    def test_known_propensity_monte_carlo(self):
        rng = np.random.default_rng(2)
        n = 5000
        w = rng.normal(size=(n, 3))
        d = rng.binomial(1, 0.3, n)
        s = rng.normal(size=n)
        view = TwoPeriodView(w=w, x_cols=(0,), d=d, s=s,
                             source_unit=tuple(range(n)), w_names=("a", "b", "c"))
        nuis = cross_fit(view, 5, RIDGE, LOGIT, clip=0.01, seed=0)
        assert abs(nuis.pi_hat.mean() - 0.3) < 0.02

    def test_determinism(self):
        view = make_view(150, seed=3)
        a = cross_fit(view, 2, RIDGE, LOGIT, clip=0.01, seed=9)
        b = cross_fit(view, 2, RIDGE, LOGIT, clip=0.01, seed=9)
        np.testing.assert_array_equal(a.g_hat, b.g_hat)
        np.testing.assert_array_equal(a.pi_hat, b.pi_hat)
        np.testing.assert_array_equal(a.fold.fold_of, b.fold.fold_of)

    def test_clipping_exact(self):
        view = make_view(300, seed=4, p_treat=0.5)
        # make treatment almost separable so raw probabilities saturate
        d = (view.w[:, 0] > 0).astype(int)
        d[0], d[1] = 1 - d[0], 1 - d[1]
        view2 = TwoPeriodView(w=view.w.copy(), x_cols=view.x_cols, d=d,
                              s=view.s.copy(), source_unit=view.source_unit,
                              w_names=view.w_names)
        nuis = cross_fit(view2, 3, RIDGE, LOGIT, clip=0.02, seed=0)
        assert nuis.pi_hat.min() >= 0.02
        assert nuis.pi_hat.max() <= 0.98

    def test_out_of_fold_purity(self):
        """Poison one fold's rows; out-of-fold values elsewhere must not move."""
        view = make_view(160, seed=5)
        nuis = cross_fit(view, 4, RIDGE, LOGIT, clip=0.01, seed=1)
        fold_of = nuis.fold.fold_of
        poison = fold_of == 0
        s2 = view.s.copy()
        s2[poison] += 1e6
        view2 = TwoPeriodView(w=view.w.copy(), x_cols=view.x_cols, d=view.d.copy(),
                              s=s2, source_unit=view.source_unit,
                              w_names=view.w_names)
        nuis2 = cross_fit(view2, 4, RIDGE, LOGIT, clip=0.01, seed=1)
        # fold 0 rows were predicted by models that never saw fold 0: identical
        np.testing.assert_array_equal(nuis.g_hat[poison], nuis2.g_hat[poison])
        # other folds trained on the poisoned rows: they must move
        assert np.max(np.abs(nuis.g_hat[~poison] - nuis2.g_hat[~poison])) > 1.0

    def test_g_training_ignores_treated_rows(self):
        """Poison treated outcomes; g_hat must be unchanged everywhere."""
        view = make_view(160, seed=6)
        nuis = cross_fit(view, 4, RIDGE, LOGIT, clip=0.01, seed=2)
        s2 = view.s.copy()
        s2[view.d == 1] += 1e6
        view2 = TwoPeriodView(w=view.w.copy(), x_cols=view.x_cols, d=view.d.copy(),
                              s=s2, source_unit=view.source_unit,
                              w_names=view.w_names)
        nuis2 = cross_fit(view2, 4, RIDGE, LOGIT, clip=0.01, seed=2)
        np.testing.assert_array_equal(nuis.g_hat, nuis2.g_hat)

    def test_single_group_view_errors(self):
        view = make_view(60, seed=7)
        allone = TwoPeriodView(w=view.w.copy(), x_cols=view.x_cols,
                               d=np.ones(60, dtype=int), s=view.s.copy(),
                               source_unit=view.source_unit, w_names=view.w_names)
        with pytest.raises(CrossFitError):
            cross_fit(allone, 3, RIDGE, LOGIT, clip=0.01, seed=0)

    def test_learner_error_carries_fold_index(self):
        view = make_view(80, seed=8)
        bad = LearnerSpec(kind="ridge", penalty_grid=())
        with pytest.raises(CrossFitError, match="fold 0"):
            cross_fit(view, 2, bad, LOGIT, clip=0.01, seed=0)


class TestCrossFitArm:
    def test_trains_on_requested_arm_only(self):
        view = make_view(160, seed=9)
        nuis = cross_fit(view, 4, RIDGE, LOGIT, clip=0.01, seed=3)
        g1 = cross_fit_arm(view, RIDGE, nuis.fold, arm=1)
        # poisoning control outcomes must not affect the treated-arm fit
        s2 = view.s.copy()
        s2[view.d == 0] -= 1e6
        view2 = TwoPeriodView(w=view.w.copy(), x_cols=view.x_cols, d=view.d.copy(),
                              s=s2, source_unit=view.source_unit,
                              w_names=view.w_names)
        g1_again = cross_fit_arm(view2, RIDGE, nuis.fold, arm=1)
        np.testing.assert_array_equal(g1, g1_again)


class TestHeldOutNuisances:
    def test_predicts_on_new_rows(self):
        train = make_view(200, seed=10)
        new = make_view(50, seed=11)
        g, pi = predict_nuisances_for(train, new.w, RIDGE, LOGIT, clip=0.05)
        assert g.shape == (50,)
        assert pi.min() >= 0.05 and pi.max() <= 0.95
