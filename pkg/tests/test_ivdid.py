import numpy as np
import pytest

from hetdid import (
    IvDgpConfig,
    IvView,
    NuisanceEstimates,
    TwoPeriodView,
    assign_folds,
    att,
    cross_fit_iv,
    fit_dr_catt,
    fit_dr_clate,
    iv_pseudo,
    latt,
    pseudo_outcome,
    simulate_iv,
)
from hetdid.exceptions import (
    NonConvexSystemError,
    SpecValidationError,
    WeakInstrumentError,
)
from hetdid.ivdid import IvNuisance, load_iv_csv
from hetdid.learners import LearnerSpec

LINEAR = LearnerSpec(kind="linear")
RIDGE = LearnerSpec(kind="ridge", penalty=1.0)
LOGIT = LearnerSpec(kind="logistic")


def oracle_nuisance(sim, clip=0.01):
    folds = assign_folds(sim.view.n_rows, 2, 0, sim.view.z)
    return IvNuisance(g_y=sim.g_y.copy(), g_d=sim.g_d.copy(),
                      pi=np.clip(sim.pi, clip, 1 - clip), fold=folds, clip=clip)


class TestIvPseudo:
    def test_exposed_branch_weight_one(self):
        view = IvView(w=np.zeros((2, 1)), x_cols=(0,), z=np.array([1, 0]),
                      dy=np.array([3.0, 0.0]), dd=np.array([1.0, 0.0]))
        folds = assign_folds(2, 2, 0, view.z, strict=False)
        nuis = IvNuisance(g_y=np.array([1.0, 0.0]), g_d=np.array([0.25, 0.0]),
                          pi=np.array([0.3, 0.5]), fold=folds, clip=0.01)
        a, b = iv_pseudo(view, nuis)
        assert a[0] == 2.0  # Zhat = 1 exactly
        assert b[0] == 0.75

    def test_unexposed_weight_minus_one_at_half(self):
        view = IvView(w=np.zeros((2, 1)), x_cols=(0,), z=np.array([0, 1]),
                      dy=np.array([2.0, 0.0]), dd=np.array([0.0, 1.0]))
        folds = assign_folds(2, 2, 0, view.z, strict=False)
        nuis = IvNuisance(g_y=np.array([0.5, 0.0]), g_d=np.array([0.0, 0.0]),
                          pi=np.array([0.5, 0.5]), fold=folds, clip=0.01)
        a, b = iv_pseudo(view, nuis)
        assert a[0] == -1.5
        assert b[0] == 0.0

    def test_matches_scalar_formula(self):
        rng = np.random.default_rng(0)
        n = 40
        view = IvView(w=rng.normal(size=(n, 2)), x_cols=(0,),
                      z=rng.binomial(1, 0.5, n), dy=rng.normal(size=n),
                      dd=rng.choice([-1.0, 0.0, 1.0], n))
        folds = assign_folds(n, 2, 0, view.z)
        nuis = IvNuisance(g_y=rng.normal(size=n), g_d=rng.normal(size=n),
                          pi=np.clip(rng.uniform(0.2, 0.8, n), 0.01, 0.99),
                          fold=folds, clip=0.01)
        a, b = iv_pseudo(view, nuis)
        for i in range(n):
            zh = (view.z[i] - nuis.pi[i]) / (1 - nuis.pi[i])
            assert a[i] == pytest.approx(zh * (view.dy[i] - nuis.g_y[i]), abs=1e-14)
            assert b[i] == pytest.approx(zh * (view.dd[i] - nuis.g_d[i]), abs=1e-14)


class TestLatt:
    def test_zero_first_stage_hard_error(self):
        with pytest.raises(WeakInstrumentError):
            latt(np.ones(10), np.zeros(10))

    def test_weak_instrument_flag(self):
        rng = np.random.default_rng(1)
        b = rng.normal(0, 0.001, 1000) + 0.001
        est = latt(rng.normal(size=1000), b, c_z=0.05)
        assert est.weak_instrument

    def test_constant_clate_recovered(self):
        sim = simulate_iv(IvDgpConfig(n=50000, seed=2, complier_rate=0.5,
                                      always_rate=0.25, effect=("constant", 1.0)))
        a, b = iv_pseudo(sim.view, oracle_nuisance(sim))
        est = latt(a, b)
        resid = a - est.value * b
        se = np.std(resid) / (np.sqrt(len(a)) * abs(np.mean(b)))
        assert not est.weak_instrument
        assert abs(est.value - 1.0) < 3 * se

    def test_perfect_compliance_equals_att_path(self):
        """dD = Z with g_D = 0 collapses the ratio to the treated-effects ATT."""
        rng = np.random.default_rng(3)
        n = 3000
        w = rng.normal(size=(n, 2))
        z = rng.binomial(1, 0.5, n)
        dy = w[:, 0] + z * 1.5 + rng.normal(0, 0.3, n)
        view = IvView(w=w, x_cols=(0,), z=z, dy=dy, dd=z.astype(float))
        folds = assign_folds(n, 2, 0, z)
        pi = np.full(n, 0.5)
        g_y = w[:, 0]
        nuis = IvNuisance(g_y=g_y, g_d=np.zeros(n), pi=pi, fold=folds, clip=0.01)
        a, b = iv_pseudo(view, nuis)
        est = latt(a, b)

        tview = TwoPeriodView(w=w.copy(), x_cols=(0,), d=z.copy(), s=dy.copy(),
                              source_unit=tuple(range(n)), w_names=("a", "b"))
        tnuis = NuisanceEstimates(g_hat=g_y.copy(), pi_hat=pi.copy(), fold=folds,
                                  clip=0.01)
        att_est = att(pseudo_outcome(tview, tnuis))
        assert est.value == pytest.approx(att_est, abs=1e-10)


class TestFitDrClate:
    def test_intercept_only_equals_latt(self):
        sim = simulate_iv(IvDgpConfig(n=2000, seed=4))
        a, b = iv_pseudo(sim.view, oracle_nuisance(sim))
        model = fit_dr_clate(a, b, np.zeros((len(a), 0)), LINEAR, ridge_penalty=0.0)
        assert model.coef_[0] == pytest.approx(latt(a, b).value, abs=1e-10)

    def test_linear_effect_coefficient_recovered(self):
        sim = simulate_iv(IvDgpConfig(n=20000, seed=5, complier_rate=0.6,
                                      always_rate=0.2, effect=("linear", 0.5)))
        a, b = iv_pseudo(sim.view, oracle_nuisance(sim))
        model = fit_dr_clate(a, b, sim.view.x, LINEAR)
        # coef_ = [intercept, x1 slope, x2 slope]
        assert abs(model.coef_[1] - 0.5) < 0.05
        assert abs(model.coef_[0]) < 0.05

    def test_sharp_design_reduces_to_dr_catt(self):
        rng = np.random.default_rng(6)
        n = 2000
        w = rng.normal(size=(n, 3))
        z = rng.binomial(1, 0.5, n)
        dy = w[:, 0] + z * (1 + 0.5 * w[:, 1]) + rng.normal(0, 0.3, n)
        pi = np.clip(rng.uniform(0.3, 0.7, n), 0.01, 0.99)
        g_y = w[:, 0]

        view = IvView(w=w, x_cols=(0, 1), z=z, dy=dy, dd=z.astype(float))
        folds = assign_folds(n, 2, 0, z)
        nuis = IvNuisance(g_y=g_y.copy(), g_d=np.zeros(n), pi=pi.copy(),
                          fold=folds, clip=0.01)
        a, b = iv_pseudo(view, nuis)
        lam = 1e-6 * n
        clate = fit_dr_clate(a, b, view.x, LINEAR, ridge_penalty=lam)

        tview = TwoPeriodView(w=w.copy(), x_cols=(0, 1), d=z.copy(), s=dy.copy(),
                              source_unit=tuple(range(n)), w_names=("a", "b", "c"))
        tnuis = NuisanceEstimates(g_hat=g_y.copy(), pi_hat=pi.copy(), fold=folds,
                                  clip=0.01)
        catt_model = fit_dr_catt(pseudo_outcome(tview, tnuis), LINEAR,
                                 ridge_penalty=lam)
        np.testing.assert_allclose(clate.coef_, catt_model.coef_, atol=1e-8)

    def test_gbt_final_stage_rejected(self):
        with pytest.raises(SpecValidationError, match="linear"):
            fit_dr_clate(np.ones(10), np.ones(10), np.ones((10, 1)),
                         LearnerSpec(kind="gbt"))

    def test_indefinite_system_errors_with_eigenvalue(self):
        # all-negative B makes the loss concave; regularization cannot save it
        n = 50
        rng = np.random.default_rng(7)
        x = rng.normal(size=(n, 1))
        b = -np.ones(n)
        with pytest.raises(NonConvexSystemError) as err:
            fit_dr_clate(rng.normal(size=n), b, x, LINEAR, ridge_penalty=1e-6)
        assert err.value.smallest_eigenvalue < 0

    def test_degenerate_compliance_raises_weak_flag(self):
        sim = simulate_iv(IvDgpConfig(n=4000, seed=8, complier_rate=0.02,
                                      always_rate=0.3))
        a, b = iv_pseudo(sim.view, oracle_nuisance(sim))
        est = latt(a, b)
        assert est.weak_instrument

    def test_never_taker_only_is_hard_error(self):
        # zero compliers and zero always-takers: first stage identically zero
        sim = simulate_iv(IvDgpConfig(n=1000, seed=9, complier_rate=0.0,
                                      always_rate=0.0))
        a, b = iv_pseudo(sim.view, oracle_nuisance(sim))
        with pytest.raises(WeakInstrumentError):
            latt(a, b)


class TestIvDgp:
    def test_compliance_outside_unit_interval_errors(self):
        with pytest.raises(SpecValidationError):
            IvDgpConfig(complier_rate=1.5)
        with pytest.raises(SpecValidationError):
            IvDgpConfig(complier_rate=-0.1)

    def test_full_compliance_is_sharp(self):
        sim = simulate_iv(IvDgpConfig(n=500, seed=10, complier_rate=1.0,
                                      always_rate=0.0))
        np.testing.assert_array_equal(sim.view.dd, sim.view.z.astype(float))
        np.testing.assert_array_equal(sim.g_d, np.zeros(500))

    def test_determinism(self):
        a = simulate_iv(IvDgpConfig(n=300, seed=11))
        b = simulate_iv(IvDgpConfig(n=300, seed=11))
        np.testing.assert_array_equal(a.view.dy, b.view.dy)
        np.testing.assert_array_equal(a.view.z, b.view.z)


class TestCrossFitIv:
    def test_unexposed_training_purity(self):
        sim = simulate_iv(IvDgpConfig(n=600, seed=12))
        nuis = cross_fit_iv(sim.view, 3, RIDGE, RIDGE, LOGIT, clip=0.01, seed=0)
        # poison exposed outcomes: g_y must not move
        dy2 = sim.view.dy.copy()
        dy2[sim.view.z == 1] += 1e6
        view2 = IvView(w=sim.view.w.copy(), x_cols=sim.view.x_cols,
                       z=sim.view.z.copy(), dy=dy2, dd=sim.view.dd.copy())
        nuis2 = cross_fit_iv(view2, 3, RIDGE, RIDGE, LOGIT, clip=0.01, seed=0)
        np.testing.assert_array_equal(nuis.g_y, nuis2.g_y)

    def test_estimated_nuisances_recover_constant_effect(self):
        sim = simulate_iv(IvDgpConfig(n=20000, seed=13, complier_rate=0.6,
                                      always_rate=0.2, effect=("constant", 1.0)))
        nuis = cross_fit_iv(sim.view, 5, RIDGE, RIDGE, LOGIT, clip=0.01, seed=1)
        a, b = iv_pseudo(sim.view, nuis)
        est = latt(a, b)
        assert abs(est.value - 1.0) < 0.1


class TestLoadIvCsv:
    def test_round_trip(self, tmp_path):
        rows = ["id,t,y,g,z,d,x1"]
        # two units, two periods; unit a exposed and adopts at period 1
        rows += ["a,0,1.0,never,1,0,0.3", "a,1,3.0,never,1,1,0.3"]
        rows += ["b,0,0.5,never,0,0,-0.2", "b,1,0.7,never,0,0,-0.2"]
        path = tmp_path / "iv.csv"
        path.write_text("\n".join(rows) + "\n")
        schema = {"unit": "id", "period": "t", "outcome": "y", "cohort": "g",
                  "covariates": ["x1"], "instrument": "z", "treatment": "d"}
        view = load_iv_csv(path, schema, pre=0, post=1, x_cols=(0,))
        assert view.z.tolist() == [1, 0]
        assert view.dy.tolist() == [2.0, pytest.approx(0.2)]
        assert view.dd.tolist() == [1.0, 0.0]

    def test_lagged_conditioning_sets(self, tmp_path):
        rows = ["id,t,y,g,z,d,x1",
                "a,0,1.0,never,1,1,0.3", "a,1,3.0,never,1,1,0.3",
                "b,0,0.5,never,0,0,-0.2", "b,1,0.7,never,0,0,-0.2"]
        path = tmp_path / "iv.csv"
        path.write_text("\n".join(rows) + "\n")
        schema = {"unit": "id", "period": "t", "outcome": "y", "cohort": "g",
                  "covariates": ["x1"], "instrument": "z", "treatment": "d"}
        view = load_iv_csv(path, schema, lagged=True)
        assert view.w_y.shape == (2, 2)
        assert view.w_y[:, 1].tolist() == [1.0, 0.5]   # lagged outcome
        assert view.w_d[:, 1].tolist() == [1.0, 0.0]   # lagged adoption
