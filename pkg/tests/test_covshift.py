import numpy as np
import pytest

from hetdid import (
    NuisanceEstimates,
    RieszSpec,
    ShiftView,
    TwoPeriodView,
    assign_folds,
    att,
    covshift_pseudo_outcome,
    cross_fit_shift,
    fit_covshift_functional,
    moment_values,
    pseudo_outcome,
)
from hetdid.exceptions import SpecValidationError
from hetdid.learners import LearnerSpec

LINEAR = LearnerSpec(kind="linear")


def make_shift_view(n=500, seed=0, shift=1.0):
    """Source W ~ N(0,1), target W ~ N(shift, 1); Y = w0 + 0.5*w1 + noise."""
    rng = np.random.default_rng(seed)
    e = rng.binomial(1, 0.5, n)
    w = rng.normal(size=(n, 2)) + shift * e[:, None] * np.array([1.0, 0.0])
    y = w[:, 0] + 0.5 * w[:, 1] + rng.normal(0, 0.2, n)
    y_vis = y.copy()
    y_vis[e == 1] = np.nan  # labels genuinely absent on target rows
    return ShiftView(w=w, x_cols=(0,), e=e, y=y_vis), y


class TestMomentValues:
    def test_identity(self):
        np.testing.assert_array_equal(
            moment_values("identity", g_hat=np.array([2.5])), [2.5])

    def test_cate_diff(self):
        out = moment_values("cate_diff", g1_hat=np.array([3.0]),
                            g0_hat=np.array([1.0]))
        np.testing.assert_array_equal(out, [2.0])

    def test_residual(self):
        out = moment_values("residual", g_hat=np.array([1.0]), s=np.array([3.0]))
        np.testing.assert_array_equal(out, [2.0])

    def test_missing_pieces_error(self):
        with pytest.raises(SpecValidationError):
            moment_values("cate_diff", g_hat=np.array([1.0]))
        with pytest.raises(SpecValidationError):
            moment_values("nope", g_hat=np.array([1.0]))


class TestPseudoOutcome:
    def test_target_branch_ignores_label(self):
        view = ShiftView(w=np.zeros((2, 1)), x_cols=(0,), e=np.array([1, 0]),
                         y=np.array([np.nan, 3.0]))
        ps = covshift_pseudo_outcome(view, g_hat=np.array([4.0, 1.0]),
                                     pi_hat=np.array([0.5, 0.5]),
                                     alpha=RieszSpec(kind="constant", value=1.0),
                                     m_kind="identity")
        assert ps.y_hat[0] == 4.0

    def test_source_branch_arithmetic(self):
        view = ShiftView(w=np.zeros((2, 1)), x_cols=(0,), e=np.array([0, 1]),
                         y=np.array([3.0, np.nan]))
        ps = covshift_pseudo_outcome(view, g_hat=np.array([1.0, 0.0]),
                                     pi_hat=np.array([0.5, 0.5]),
                                     alpha=RieszSpec(kind="constant", value=1.0),
                                     m_kind="identity")
        assert ps.y_hat[0] == 2.0  # (0.5/0.5) * 1 * (3 - 1)

    def test_catt_instance_bit_exact(self):
        """m = S - g, alpha = -1, E = D reproduces the treated-effects path."""
        rng = np.random.default_rng(1)
        n = 300
        w = rng.normal(size=(n, 2))
        d = rng.binomial(1, 0.5, n)
        s = w[:, 0] + d * 0.7 + rng.normal(0, 0.3, n)
        g = rng.normal(size=n)
        pi = np.clip(rng.uniform(0.2, 0.8, n), 0.01, 0.99)

        view = TwoPeriodView(w=w, x_cols=(0,), d=d, s=s,
                             source_unit=tuple(range(n)), w_names=("a", "b"))
        folds = assign_folds(n, 2, 0, d)
        nuis = NuisanceEstimates(g_hat=g.copy(), pi_hat=pi.copy(), fold=folds,
                                 clip=0.01)
        catt_ps = pseudo_outcome(view, nuis)

        poisoned_y = s.copy()
        poisoned_y[d == 1] = np.nan  # firewall: target labels unreadable
        sview = ShiftView(w=w.copy(), x_cols=(0,), e=d.copy(), y=poisoned_y,
                          s=s.copy())
        shift_ps = covshift_pseudo_outcome(
            sview, g_hat=g, pi_hat=pi,
            alpha=RieszSpec(kind="constant", value=-1.0), m_kind="residual")
        assert np.array_equal(catt_ps.y_hat, shift_ps.y_hat)  # bitwise

    def test_label_firewall_poisoned_values(self):
        view, full_y = make_shift_view(n=200, seed=2)
        g = np.zeros(200)
        pi = np.full(200, 0.5)
        poisoned = view.y.copy()
        poisoned[view.e == 1] = 1e300  # any value; must not leak through
        pview = ShiftView(w=view.w.copy(), x_cols=view.x_cols, e=view.e.copy(),
                          y=poisoned)
        a = covshift_pseudo_outcome(pview, g, pi,
                                    RieszSpec(kind="constant", value=1.0),
                                    "identity")
        b = covshift_pseudo_outcome(view, g, pi,
                                    RieszSpec(kind="constant", value=1.0),
                                    "identity")
        np.testing.assert_array_equal(a.y_hat, b.y_hat)

    def test_missing_source_label_errors(self):
        with pytest.raises(ValueError, match="source"):
            ShiftView(w=np.zeros((2, 1)), x_cols=(0,), e=np.array([0, 1]),
                      y=np.array([np.nan, 1.0]))

    def test_unclipped_pi_errors(self):
        view, _ = make_shift_view(n=50, seed=3)
        with pytest.raises(ValueError, match="clip"):
            covshift_pseudo_outcome(view, np.zeros(50), np.full(50, 0.001),
                                    RieszSpec(kind="constant", value=1.0),
                                    "identity", clip=0.01)


class TestFitFunctional:
    def test_intercept_only_equals_ratio(self):
        view, _ = make_shift_view(n=400, seed=4)
        g = np.zeros(400)
        pi = np.full(400, 0.5)
        ps = covshift_pseudo_outcome(view, g, pi,
                                     RieszSpec(kind="constant", value=1.0),
                                     "identity")
        # intercept-only x
        from hetdid.catt import PseudoOutcome
        ps0 = PseudoOutcome(y_hat=ps.y_hat.copy(), d=ps.d.copy(),
                            x=np.zeros((400, 0)))
        model = fit_covshift_functional(ps0, LINEAR, ridge_penalty=0.0)
        assert model.coef_[0] == pytest.approx(att(ps0), abs=1e-10)

    def test_known_shift_recovery_with_true_nuisances(self):
        """Shifted-mean estimand with oracle nuisances: unbiased within MC error."""
        rng = np.random.default_rng(5)
        n = 40000
        e = rng.binomial(1, 0.5, n)
        w = rng.normal(size=(n, 1)) + 1.0 * e[:, None]
        g0 = 2.0 * w[:, 0]
        y = g0 + rng.normal(0, 0.5, n)
        y_vis = y.copy()
        y_vis[e == 1] = np.nan
        view = ShiftView(w=w, x_cols=(0,), e=e, y=y_vis)
        from scipy.stats import norm
        pi_true = np.clip(
            norm.pdf(w[:, 0], 1, 1) * 0.5
            / (norm.pdf(w[:, 0], 1, 1) * 0.5 + norm.pdf(w[:, 0], 0, 1) * 0.5),
            0.01, 0.99)
        ps = covshift_pseudo_outcome(view, g0, pi_true,
                                     RieszSpec(kind="constant", value=1.0),
                                     "identity")
        target = att(ps)  # estimates E_target[g0(W)] = 2.0
        se = np.std(ps.y_hat - target * ps.d) / (np.sqrt(n) * ps.d.mean())
        assert abs(target - 2.0) < 3 * se

    def test_double_robustness_wrong_g(self):
        """Corrupt g, true pi: the unconditional estimate stays unbiased."""
        rng = np.random.default_rng(6)
        n = 40000
        e = rng.binomial(1, 0.5, n)
        w = rng.normal(size=(n, 1))  # no actual shift: pi = 0.5 is exact
        g0 = w[:, 0]
        y = g0 + rng.normal(0, 0.5, n)
        y_vis = y.copy()
        y_vis[e == 1] = np.nan
        view = ShiftView(w=w, x_cols=(0,), e=e, y=y_vis)
        ps = covshift_pseudo_outcome(view, g0 + 0.7, np.full(n, 0.5),
                                     RieszSpec(kind="constant", value=1.0),
                                     "identity")
        est = att(ps)
        se = np.std(ps.y_hat - est * ps.d) / (np.sqrt(n) * ps.d.mean())
        assert abs(est - 0.0) < 3 * se


class TestCrossFitShift:
    def test_g_trained_on_source_rows_only(self):
        view, full_y = make_shift_view(n=400, seed=7)
        nuis = cross_fit_shift(view, 3, LearnerSpec(kind="ridge", penalty=1.0),
                               LearnerSpec(kind="logistic"), clip=0.01, seed=0)
        # poisoning target labels cannot change anything (they are NaN anyway,
        # so instead check pi is clipped and g is finite)
        assert np.all(np.isfinite(nuis.g_hat))
        assert nuis.pi_hat.min() >= 0.01 and nuis.pi_hat.max() <= 0.99

    def test_cate_diff_needs_d(self):
        view, _ = make_shift_view(n=100, seed=8)
        with pytest.raises(SpecValidationError, match="D column"):
            cross_fit_shift(view, 2, LearnerSpec(kind="ridge", penalty=1.0),
                            LearnerSpec(kind="logistic"), clip=0.01, seed=0,
                            m_kind="cate_diff")
