"""Treated-population MSE, the benchmark grid, and calibration validation."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .catt import (
    PseudoOutcome,
    att,
    fit_cate_dr,
    fit_cate_or,
    fit_dr_catt,
    fit_or_catt,
    pseudo_outcome,
)
from .crossfit import cross_fit, cross_fit_arm
from .dgp import DgpConfig, simulate, true_catt
from .exceptions import SpecValidationError
from .learners import LearnerSpec
from .panel import TwoPeriodView, two_period

LEARNER_NAMES = ("dr", "or", "cate_dr", "cate_or")


def mse_treated(model, test_view, oracle_theta) -> float:
    """Mean squared error of theta-hat against the oracle over treated test rows."""
    oracle = np.asarray(oracle_theta, dtype=float)
    treated = test_view.d == 1
    if not treated.any():
        raise ValueError("no treated rows in the test view")
    if oracle.shape[0] != test_view.n_rows:
        raise ValueError("oracle values misaligned with the test view")
    pred = model.predict(test_view.x[treated])
    return float(np.mean((pred - oracle[treated]) ** 2))


# ---------------------------------------------------------------------------
# Benchmark grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    """Grid of (learner x nuisance spec x DGP variant), R replications each.

    ``nuisances`` maps a display name to a (g_spec, pi_spec) pair. Child seeds
    are derived from the master seed and a hash of the cell coordinates, so
    adding cells never perturbs existing cells' draws.
    """

    learners: tuple[str, ...]
    nuisances: dict
    variants: tuple[str, ...] = ("cpt",)
    final: LearnerSpec = field(default_factory=lambda: LearnerSpec(kind="gbt"))
    replications: int = 20
    n_train: int = 5000
    n_test: int = 2000
    x_cols: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_folds: int = 5
    clip: float = 0.01
    master_seed: int = 0
    cate_rows: str = "treated"
    jobs: int = 1

    def __post_init__(self):
        for l in self.learners:
            if l not in LEARNER_NAMES:
                raise SpecValidationError(f"unknown learner {l!r}")
        if self.replications < 1:
            raise SpecValidationError("replications must be >= 1")


@dataclass(frozen=True)
class BenchmarkRow:
    variant: str
    learner: str
    nuisance: str
    replication: int
    seed: int
    mse: float


@dataclass(frozen=True)
class BenchmarkResult:
    rows: tuple[BenchmarkRow, ...]
    wall_clock: float
    config: BenchmarkConfig

    def cell(self, variant: str, learner: str, nuisance: str) -> list[float]:
        return [r.mse for r in self.rows
                if (r.variant, r.learner, r.nuisance) == (variant, learner, nuisance)]

    def summary(self) -> list[dict]:
        out = []
        for variant in self.config.variants:
            for learner in self.config.learners:
                for name in self.config.nuisances:
                    vals = self.cell(variant, learner, name)
                    if not vals:
                        continue
                    out.append({
                        "variant": variant,
                        "learner": learner,
                        "nuisance": name,
                        "mean_mse": float(np.mean(vals)),
                        "std_mse": float(np.std(vals)),
                        "replications": len(vals),
                    })
        return out


def cell_seed(master_seed: int, variant: str, learner: str, nuisance: str,
              replication: int) -> int:
    """Stable child seed: hash of the cell coordinates, then the replication."""
    digest = hashlib.sha256(f"{variant}|{learner}|{nuisance}".encode()).digest()
    cell = int.from_bytes(digest[:8], "big")
    ss = np.random.SeedSequence([master_seed, cell, replication])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_one(config: BenchmarkConfig, variant: str, learner: str,
             nuisance_name: str, replication: int) -> BenchmarkRow:
    seed = cell_seed(config.master_seed, variant, learner, nuisance_name, replication)
    g_spec, pi_spec = config.nuisances[nuisance_name]
    sim = simulate(DgpConfig(n=config.n_train + config.n_test, variant=variant,
                             seed=seed))
    dgp_config = sim.config
    view = two_period(sim.panel, 0, 1, config.x_cols)
    tr = np.arange(config.n_train)
    te = np.arange(config.n_train, config.n_train + config.n_test)
    train_view = _subset_view(view, tr)
    test_view = _subset_view(view, te)
    oracle = true_catt(dgp_config, sim.panel.covariates[te])

    nuis = cross_fit(train_view, config.n_folds, g_spec, pi_spec, config.clip,
                     seed=seed)
    if learner == "dr":
        model = fit_dr_catt(pseudo_outcome(train_view, nuis), config.final)
    elif learner == "or":
        model = fit_or_catt(train_view, nuis, config.final)
    else:
        g1 = cross_fit_arm(train_view, g_spec, nuis.fold, arm=1)
        if learner == "cate_or":
            model = fit_cate_or(train_view, g1, nuis, config.final,
                                rows=config.cate_rows)
        else:
            model = fit_cate_dr(train_view, g1, nuis, config.final,
                                rows=config.cate_rows)
    mse = mse_treated(model, test_view, oracle)
    return BenchmarkRow(variant=variant, learner=learner, nuisance=nuisance_name,
                        replication=replication, seed=seed, mse=mse)


def _subset_view(view, rows):
    return TwoPeriodView(
        w=view.w[rows].copy(), x_cols=view.x_cols, d=view.d[rows].copy(),
        s=view.s[rows].copy(),
        source_unit=tuple(view.source_unit[i] for i in np.atleast_1d(rows)),
        w_names=view.w_names, transform=view.transform,
    )


def run_benchmark(config: BenchmarkConfig) -> BenchmarkResult:
    """Run every (cell, replication); deterministic given the master seed."""
    tasks = [
        (variant, learner, name, rep)
        for variant in config.variants
        for learner in config.learners
        for name in config.nuisances
        for rep in range(config.replications)
    ]
    start = time.perf_counter()
    if config.jobs == 1:
        rows = [_run_one(config, *t) for t in tasks]
    else:
        rows = Parallel(n_jobs=config.jobs)(
            delayed(_run_one)(config, *t) for t in tasks
        )
    return BenchmarkResult(rows=tuple(rows),
                           wall_clock=time.perf_counter() - start,
                           config=config)


# ---------------------------------------------------------------------------
# Calibration / group-effect validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationBin:
    index: int
    lower: float
    upper: float
    count: int
    treated: int
    gatt_model: float
    att: float
    se: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class CalibrationReport:
    """Per-bin model group effects against doubly robust group estimates.

    Thresholds come from validation-set prediction quantiles; test predictions
    are binned with ties going to the lower bin. A well-calibrated model puts
    (gatt_model, att) pairs on the 45-degree line.
    """

    thresholds: tuple[float, ...]
    bins: tuple[CalibrationBin, ...]
    overall_att: float
    n_bins_requested: int
    collapsed: int
    empty_bins: tuple[int, ...]

    def to_rows(self) -> list[dict]:
        return [{
            "bin": b.index, "lower": b.lower, "upper": b.upper,
            "count": b.count, "treated": b.treated,
            "gatt_model": b.gatt_model, "att": b.att, "se": b.se,
            "ci_low": b.ci_low, "ci_high": b.ci_high,
        } for b in self.bins]


def _ratio_se(y_hat: np.ndarray, d: np.ndarray, ratio: float) -> float:
    n = y_hat.shape[0]
    if n == 0 or d.mean() == 0:
        return float("nan")
    resid = y_hat - ratio * d
    return float(resid.std() / (np.sqrt(n) * d.mean()))


def calibrate(model, val_pseudo: PseudoOutcome, test_pseudo: PseudoOutcome,
              n_bins: int, se_method: str = "delta", n_boot: int = 500,
              seed: int = 0) -> CalibrationReport:
    """Quantile-bin validation-set predictions, estimate group effects on test.

    Per bin: the model's group effect is the mean prediction; the reference is
    the doubly robust ratio mean(Yhat)/mean(D) over the bin with a delta-method
    (or seeded-bootstrap) standard error and a 1.96 * SE interval. Duplicate
    thresholds collapse bins (reported); empty test bins are reported, not
    fatal.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if se_method not in ("delta", "bootstrap"):
        raise ValueError("se_method must be 'delta' or 'bootstrap'")
    val_pred = model.predict(val_pseudo.x)
    qs = np.arange(1, n_bins) / n_bins
    thresholds = np.unique(np.quantile(val_pred, qs))
    collapsed = (n_bins - 1) - thresholds.size
    n_eff = thresholds.size + 1

    test_pred = model.predict(test_pseudo.x)
    # value == threshold goes to the lower bin: bins are (thr[j-1], thr[j]].
    bin_of = np.searchsorted(thresholds, test_pred, side="left")

    rng = np.random.default_rng(seed)
    bins = []
    empty = []
    for b in range(n_eff):
        mask = bin_of == b
        count = int(mask.sum())
        lower = float(thresholds[b - 1]) if b > 0 else float("-inf")
        upper = float(thresholds[b]) if b < thresholds.size else float("inf")
        if count == 0 or test_pseudo.d[mask].sum() == 0:
            empty.append(b)
            bins.append(CalibrationBin(
                index=b, lower=lower, upper=upper, count=count,
                treated=int(test_pseudo.d[mask].sum()),
                gatt_model=float("nan"), att=float("nan"), se=float("nan"),
                ci_low=float("nan"), ci_high=float("nan"),
            ))
            continue
        y_b = test_pseudo.y_hat[mask]
        d_b = test_pseudo.d[mask].astype(float)
        ratio = float(y_b.mean() / d_b.mean())
        if se_method == "delta":
            se = _ratio_se(y_b, d_b, ratio)
        else:
            draws = []
            for _ in range(n_boot):
                idx = rng.integers(0, count, size=count)
                if d_b[idx].sum() == 0:
                    continue
                draws.append(y_b[idx].mean() / d_b[idx].mean())
            se = float(np.std(draws)) if draws else float("nan")
        bins.append(CalibrationBin(
            index=b, lower=lower, upper=upper, count=count,
            treated=int(d_b.sum()), gatt_model=float(test_pred[mask].mean()),
            att=ratio, se=se, ci_low=ratio - 1.96 * se, ci_high=ratio + 1.96 * se,
        ))

    return CalibrationReport(
        thresholds=tuple(float(t) for t in thresholds),
        bins=tuple(bins),
        overall_att=att(test_pseudo),
        n_bins_requested=n_bins,
        collapsed=collapsed,
        empty_bins=tuple(empty),
    )
