"""High-level workflows behind the CLI commands.

Each workflow materializes data from the configured source, builds the
estimation view, cross-fits nuisances, fits the requested learner and returns
the artifacts plus a JSON-ready report. Every split and fit is seeded from the
run seed, so a config re-runs to identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import catt, covshift, ivdid
from .config import RunConfig
from .crossfit import cross_fit, cross_fit_arm, predict_nuisances_for
from .dgp import (
    DgpConfig,
    Formula,
    IvDgpConfig,
    SemiSynthConfig,
    default_min_wage_recipe,
    semisynthetic,
    simulate,
    simulate_iv,
)
from .evaluation import BenchmarkConfig, calibrate, mse_treated, run_benchmark
from .exceptions import SpecValidationError
from .learners import LearnerSpec
from .panel import (
    PanelDataset,
    PanelSchema,
    TwoPeriodView,
    event_study_expand,
    load_panel_csv,
    two_period,
)


def resolve_x_cols(names: tuple[str, ...], requested) -> tuple[int, ...]:
    """Map configured x column names (or indices) to covariate indices."""
    idx = []
    for c in requested:
        if isinstance(c, int):
            idx.append(c)
        elif c in names:
            idx.append(names.index(c))
        else:
            raise SpecValidationError(f"x column {c!r} not among covariates {names}")
    return tuple(idx)


def split_rows(n: int, fractions, seed: int, stratify=None) -> list[np.ndarray]:
    """Deterministic row split by fractions, optionally stratified by a 0/1 array."""
    fracs = list(fractions)
    if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise SpecValidationError(f"split fractions must sum to 1, got {fracs}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5157]))
    parts = [[] for _ in fracs]
    groups = [np.arange(n)] if stratify is None else [
        np.nonzero(np.asarray(stratify) == v)[0] for v in (0, 1)
    ]
    for grp in groups:
        perm = grp[rng.permutation(grp.size)]
        bounds = np.floor(np.cumsum(fracs) * grp.size + 1e-9).astype(int)
        start = 0
        for i, b in enumerate(bounds):
            parts[i].append(perm[start:b])
            start = b
    return [np.sort(np.concatenate(p)) for p in parts]


def subset_view(view: TwoPeriodView, rows: np.ndarray) -> TwoPeriodView:
    return TwoPeriodView(
        w=view.w[rows].copy(), x_cols=view.x_cols, d=view.d[rows].copy(),
        s=view.s[rows].copy(),
        source_unit=tuple(view.source_unit[i] for i in rows),
        w_names=view.w_names, transform=view.transform,
    )


# ---------------------------------------------------------------------------
# Data materialization
# ---------------------------------------------------------------------------

def _semisynth_config(cfg: dict) -> SemiSynthConfig:
    if cfg.get("recipe", "default_min_wage") == "default_min_wage":
        recipe = default_min_wage_recipe(n=int(cfg.get("n", 10000)))
    else:
        r = cfg["recipe"]
        recipe = SemiSynthConfig(
            outcome_pre=r["outcome_pre"],
            covariates=tuple(r["covariates"]),
            score=Formula.from_dict(r["score"]),
            trend=Formula.from_dict(r["trend"]),
            effect=Formula.from_dict(r["effect"]),
            n=int(cfg.get("n", r.get("n", 10000))),
            noise_sd=float(r.get("noise_sd", 0.0)),
        )
    return recipe


def materialize_panel(config: RunConfig, draw: int = 0):
    """Return (PanelDataset, SimulatedPanel-or-None) for panel-shaped sources."""
    source, cfg = config.data_source
    if source == "dgp":
        dgp = DgpConfig(**{**cfg, "draw": draw})
        sim = simulate(dgp)
        return sim.panel, sim
    if source == "semisynthetic":
        recipe = _semisynth_config(cfg)
        sim = semisynthetic(cfg["base_csv"], recipe, seed=int(cfg.get("seed", config.seed)) + draw)
        return sim.panel, sim
    if source == "csv":
        panel = load_panel_csv(cfg["path"], PanelSchema.from_dict(cfg["schema"]))
        return panel, None
    raise SpecValidationError(f"data source {source!r} is not panel-shaped")


def build_view(config: RunConfig, panel: PanelDataset) -> TwoPeriodView:
    t = config.transform
    x_cols = resolve_x_cols(panel.covariate_names, config.x_cols)
    if t["kind"] == "event_study":
        return event_study_expand(panel, x_cols, include_cohort=t["include_cohort"])
    return two_period(panel, int(t["pre"]), int(t["post"]), x_cols, t["kind"])


# ---------------------------------------------------------------------------
# Fit workflows
# ---------------------------------------------------------------------------

@dataclass
class FitArtifacts:
    model: object
    report: dict
    train_view: TwoPeriodView
    train_x_names: tuple[str, ...]


def held_out_pseudo(train_view: TwoPeriodView, v: TwoPeriodView,
                    g_spec: LearnerSpec, pi_spec: LearnerSpec,
                    clip: float) -> catt.PseudoOutcome:
    """Pseudo-outcome on held-out rows with nuisances fit on the train split."""
    g_hat, pi_hat = predict_nuisances_for(train_view, v.w, g_spec, pi_spec, clip)
    resid = v.s - g_hat
    y_hat = np.where(v.d == 1, resid, -((pi_hat / (1.0 - pi_hat)) * resid))
    return catt.PseudoOutcome(y_hat=y_hat, d=v.d.copy(), x=v.x, x_cols=v.x_cols)


def fit_catt_workflow(config: RunConfig) -> FitArtifacts:
    panel, _sim = materialize_panel(config)
    view = build_view(config, panel)
    g_spec = config.spec("nuisance", "g")
    pi_spec = config.spec("nuisance", "pi", default_kind="logistic")
    final_spec = LearnerSpec.from_dict(config.raw.get("final", {"kind": "linear"}))

    if config.val_fraction > 0:
        train_rows, val_rows = split_rows(
            view.n_rows, [1 - config.val_fraction, config.val_fraction],
            config.seed, stratify=view.d,
        )
    else:
        train_rows = np.arange(view.n_rows)
        val_rows = np.empty(0, dtype=np.int64)
    train_view = subset_view(view, train_rows)

    nuis = cross_fit(train_view, config.n_folds, g_spec, pi_spec, config.clip,
                     seed=config.seed)
    learner = config.learner
    pseudo = catt.pseudo_outcome(train_view, nuis)
    if learner == "dr":
        model = catt.fit_dr_catt(pseudo, final_spec)
    elif learner == "or":
        model = catt.fit_or_catt(train_view, nuis, final_spec)
    elif learner in ("cate_or", "cate_dr"):
        g1_spec = config.spec("nuisance", "g_treated", default_kind=g_spec.kind)
        g1 = cross_fit_arm(train_view, g1_spec, nuis.fold, arm=1)
        fitter = catt.fit_cate_or if learner == "cate_or" else catt.fit_cate_dr
        model = fitter(train_view, g1, nuis, final_spec)
    else:
        raise SpecValidationError(f"unknown learner {learner!r}")

    report = {
        "mode": "catt",
        "learner": learner,
        "n_train": int(train_view.n_rows),
        "n_val": int(val_rows.size),
        "n_treated_train": int(train_view.d.sum()),
        "training_loss": float(model.training_loss_),
        "att_train": catt.att(pseudo),
        "seed": config.seed,
    }
    if val_rows.size:
        val_view = subset_view(view, val_rows)
        val_pseudo = held_out_pseudo(train_view, val_view, g_spec, pi_spec,
                                     config.clip)
        report["heldout_dr_loss"] = catt.dr_loss(model.predict(val_view.x), val_pseudo)
    model.metadata = dict(getattr(model, "metadata", {}) or {},
                          x_names=list(train_view.x_names))
    return FitArtifacts(model=model, report=report, train_view=train_view,
                        train_x_names=train_view.x_names)


@dataclass
class IvFitArtifacts:
    model: object
    report: dict
    view: ivdid.IvView


def fit_iv_workflow(config: RunConfig) -> IvFitArtifacts:
    source, cfg = config.data_source
    iv_cfg = config.raw.get("iv", {})
    if source == "iv_dgp":
        sim = simulate_iv(IvDgpConfig(**cfg))
        view = sim.view
        if config.x_cols:
            view = ivdid.IvView(w=view.w.copy(),
                                x_cols=resolve_x_cols(tuple(f"w{j+1}" for j in range(view.w.shape[1])), config.x_cols),
                                z=view.z.copy(), dy=view.dy.copy(), dd=view.dd.copy())
    elif source == "csv":
        t = config.transform
        schema = PanelSchema.from_dict(cfg["schema"])
        names = tuple(schema.covariates)
        view = ivdid.load_iv_csv(
            cfg["path"], schema, pre=int(t["pre"]), post=int(t["post"]),
            x_cols=resolve_x_cols(names, config.x_cols),
            lagged=t["kind"] == "lagged_outcome",
        )
    else:
        raise SpecValidationError("iv mode needs an iv_dgp or csv data source")

    gy_spec = config.spec("iv", "gy", default_kind="ridge")
    gd_spec = config.spec("iv", "gd", default_kind="ridge")
    pi_spec = config.spec("iv", "pi", default_kind="logistic")
    final_spec = LearnerSpec.from_dict(config.raw.get("final", {"kind": "linear"}))
    c_z = float(iv_cfg.get("c_z", ivdid.DEFAULT_CZ))

    nuis = ivdid.cross_fit_iv(view, config.n_folds, gy_spec, gd_spec, pi_spec,
                              config.clip, seed=config.seed)
    a, b = ivdid.iv_pseudo(view, nuis)
    est = ivdid.latt(a, b, c_z=c_z)
    model = ivdid.fit_dr_clate(a, b, view.x, final_spec, c_z=c_z)
    model.metadata = dict(model.metadata, x_names=[f"x{j}" for j in view.x_cols])
    report = {
        "mode": "iv",
        "latt": est.value,
        "first_stage": est.first_stage,
        "weak_instrument": est.weak_instrument,
        "c_z": c_z,
        "training_loss": float(model.training_loss_),
        "n": int(view.n_rows),
        "seed": config.seed,
    }
    return IvFitArtifacts(model=model, report=report, view=view)


@dataclass
class ShiftFitArtifacts:
    model: object
    report: dict
    view: covshift.ShiftView


def fit_covshift_workflow(config: RunConfig) -> ShiftFitArtifacts:
    source, cfg = config.data_source
    if source != "csv":
        raise SpecValidationError("covshift mode reads a flat csv data source")
    view, extras = covshift.load_shift_csv(cfg["path"], cfg["schema"])
    cs = config.raw.get("covshift", {})
    m_kind = cs.get("moment", "identity")
    riesz_cfg = cs.get("riesz", {"kind": "constant", "value": 1.0})

    g_spec = config.spec("nuisance", "g")
    pi_spec = config.spec("nuisance", "pi", default_kind="logistic")
    q_spec = None
    if riesz_cfg["kind"] == "cate_shift":
        q_spec = config.spec("nuisance", "q", default_kind="logistic")
    nuis = covshift.cross_fit_shift(view, config.n_folds, g_spec, pi_spec,
                                    config.clip, seed=config.seed,
                                    m_kind=m_kind, q_spec=q_spec)
    pi_hat = extras.get("pi", nuis.pi_hat)
    if riesz_cfg["kind"] == "constant":
        riesz = covshift.RieszSpec(kind="constant", value=float(riesz_cfg.get("value", 1.0)))
    elif riesz_cfg["kind"] == "user_table":
        riesz = covshift.RieszSpec(kind="user_table", table=extras["alpha"])
    else:
        riesz = covshift.RieszSpec(kind="cate_shift", q_hat=nuis.q_hat, clip=config.clip)
    pseudo = covshift.covshift_pseudo_outcome(
        view, nuis.g_hat, pi_hat, riesz, m_kind, clip=config.clip,
        g1_hat=nuis.g1_hat, g0_hat=nuis.g0_hat,
    )
    final_spec = LearnerSpec.from_dict(config.raw.get("final", {"kind": "linear"}))
    model = covshift.fit_covshift_functional(pseudo, final_spec)
    report = {
        "mode": "covshift",
        "moment": m_kind,
        "riesz": riesz.kind,
        "target_mean": catt.att(pseudo),
        "training_loss": float(model.training_loss_),
        "n": int(view.n_rows),
        "seed": config.seed,
    }
    return ShiftFitArtifacts(model=model, report=report, view=view)


# ---------------------------------------------------------------------------
# Evaluate / calibrate / benchmark workflows
# ---------------------------------------------------------------------------

def evaluate_workflow(config: RunConfig) -> dict:
    """Fit on the configured source and score MSE on a fresh oracle draw."""
    source, cfg = config.data_source
    if source not in ("dgp", "semisynthetic"):
        raise SpecValidationError("evaluate needs an oracle (dgp or semisynthetic source)")
    artifacts = fit_catt_workflow(config)
    panel_test, sim_test = materialize_panel(config, draw=1)
    test_view = build_view(config, panel_test)
    oracle = sim_test.theta
    mse = mse_treated(artifacts.model, test_view, oracle)
    return {
        "mode": config.mode,
        "learner": config.learner,
        "mse_treated": mse,
        "n_test": int(test_view.n_rows),
        "n_treated_test": int(test_view.d.sum()),
        "fit_report": artifacts.report,
    }


def calibrate_workflow(config: RunConfig) -> tuple:
    """Three-way split, fit on train, calibrate on val/test pseudo-outcomes."""
    cal_cfg = config.raw.get("calibrate", {})
    n_bins = int(cal_cfg.get("n_bins", 4))
    fractions = cal_cfg.get("fractions", [0.5, 0.25, 0.25])
    se_method = cal_cfg.get("se_method", "delta")

    panel, sim = materialize_panel(config)
    view = build_view(config, panel)
    g_spec = config.spec("nuisance", "g")
    pi_spec = config.spec("nuisance", "pi", default_kind="logistic")
    final_spec = LearnerSpec.from_dict(config.raw.get("final", {"kind": "linear"}))

    train_rows, val_rows, test_rows = split_rows(
        view.n_rows, fractions, config.seed, stratify=view.d)
    train_view = subset_view(view, train_rows)
    val_view = subset_view(view, val_rows)
    test_view = subset_view(view, test_rows)

    nuis = cross_fit(train_view, config.n_folds, g_spec, pi_spec, config.clip,
                     seed=config.seed)
    model = catt.fit_dr_catt(catt.pseudo_outcome(train_view, nuis), final_spec)

    val_pseudo = held_out_pseudo(train_view, val_view, g_spec, pi_spec, config.clip)
    test_pseudo = held_out_pseudo(train_view, test_view, g_spec, pi_spec, config.clip)
    report = calibrate(model, val_pseudo, test_pseudo, n_bins,
                       se_method=se_method, seed=config.seed)
    oracle_bins = None
    if sim is not None:
        theta = sim.theta[test_rows]
        pred = model.predict(test_view.x)
        bin_of = np.searchsorted(np.asarray(report.thresholds), pred, side="left")
        oracle_bins = []
        for b in range(len(report.bins)):
            mask = (bin_of == b) & (test_view.d == 1)
            oracle_bins.append(float(theta[mask].mean()) if mask.any() else float("nan"))
    return report, oracle_bins, model


def benchmark_from_config(config: RunConfig):
    b = config.raw.get("benchmark")
    if not b:
        raise SpecValidationError("config lacks a 'benchmark' section")
    nuisances = {
        name: (LearnerSpec.from_dict(pair["g"]), LearnerSpec.from_dict(pair["pi"]))
        for name, pair in b["nuisances"].items()
    }
    bench = BenchmarkConfig(
        learners=tuple(b["learners"]),
        nuisances=nuisances,
        variants=tuple(b.get("variants", ["cpt"])),
        final=LearnerSpec.from_dict(b.get("final", {"kind": "gbt"})),
        replications=int(b.get("replications", 20)),
        n_train=int(b.get("n_train", 5000)),
        n_test=int(b.get("n_test", 2000)),
        x_cols=tuple(b.get("x_cols", [0, 1, 2, 3, 4])),
        n_folds=int(b.get("n_folds", config.n_folds)),
        clip=float(b.get("clip", config.clip)),
        master_seed=config.seed,
        cate_rows=b.get("cate_rows", "treated"),
        jobs=config.jobs,
    )
    return run_benchmark(bench)
