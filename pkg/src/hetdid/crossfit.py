"""Cross-fitting engine producing out-of-fold nuisance values.

For each fold k the outcome model is trained on the control rows (D = 0) of
all other folds (its estimand conditions on the untreated group) and the
propensity on all rows of the other folds; both then fill in fold k. The model
that produced row i's value has therefore never seen row i, and no treated row
ever enters an outcome-regression training set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import CrossFitError
from .learners import LearnerSpec, fit_propensity, fit_regression
from .panel import FoldAssignment, TwoPeriodView, assign_folds
from .validation import readonly


@dataclass(frozen=True)
class NuisanceEstimates:
    """Out-of-fold outcome-regression and clipped propensity values."""

    g_hat: np.ndarray
    pi_hat: np.ndarray
    fold: FoldAssignment
    clip: float
    g_spec: LearnerSpec | None = None
    pi_spec: LearnerSpec | None = None

    def __post_init__(self):
        n = self.fold.n
        if self.g_hat.shape != (n,) or self.pi_hat.shape != (n,):
            raise ValueError("nuisance arrays are misaligned with the fold assignment")
        if not np.all(np.isfinite(self.g_hat)):
            raise ValueError("g_hat contains non-finite values")
        if not 0.0 < self.clip < 0.5:
            raise ValueError("clip must be in (0, 0.5)")
        if self.pi_hat.min() < self.clip or self.pi_hat.max() > 1.0 - self.clip:
            raise ValueError("pi_hat violates the clip bounds")
        readonly(self.g_hat)
        readonly(self.pi_hat)

    @property
    def n_rows(self) -> int:
        return self.fold.n


def cross_fit(view: TwoPeriodView, n_folds: int, g_spec: LearnerSpec,
              pi_spec: LearnerSpec, clip: float, seed: int,
              folds: FoldAssignment | None = None) -> NuisanceEstimates:
    """Produce out-of-fold g_hat (control-trained) and clipped pi_hat values."""
    n = view.n_rows
    d = view.d
    if d.sum() == 0 or d.sum() == n:
        raise CrossFitError("view must contain both treated and control rows")
    if not 0.0 < clip < 0.5:
        raise ValueError("clip must be in (0, 0.5)")
    if folds is None:
        folds = assign_folds(n, n_folds, seed, d)
    g_hat = np.empty(n)
    pi_hat = np.empty(n)
    for k in range(folds.k):
        test = folds.fold_of == k
        train = ~test
        ctrl = train & (d == 0)
        if not ctrl.any():
            raise CrossFitError(
                f"fold {k}: training complement has no control rows"
            )
        try:
            g_model = fit_regression(view.w[ctrl], view.s[ctrl], g_spec)
            pi_model = fit_propensity(view.w[train], d[train], pi_spec, clip)
        except Exception as exc:  # attach fold provenance to learner failures
            raise CrossFitError(f"fold {k}: {exc}") from exc
        g_hat[test] = g_model.predict(view.w[test])
        pi_hat[test] = pi_model.predict_proba(view.w[test])
    return NuisanceEstimates(g_hat=g_hat, pi_hat=pi_hat, fold=folds, clip=clip,
                             g_spec=g_spec, pi_spec=pi_spec)


def cross_fit_arm(view: TwoPeriodView, spec: LearnerSpec, folds: FoldAssignment,
                  arm: int = 1) -> np.ndarray:
    """Out-of-fold regression of S on W trained on one treatment arm only.

    Same engine as the control-arm nuisance with the D-filter inverted; needed
    only by the CATE-style baselines, never by the doubly robust path.
    """
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    n = view.n_rows
    out = np.empty(n)
    for k in range(folds.k):
        test = folds.fold_of == k
        rows = ~test & (view.d == arm)
        if not rows.any():
            raise CrossFitError(f"fold {k}: training complement has no d={arm} rows")
        try:
            model = fit_regression(view.w[rows], view.s[rows], spec)
        except Exception as exc:
            raise CrossFitError(f"fold {k}: {exc}") from exc
        out[test] = model.predict(view.w[test])
    return out


def predict_nuisances_for(view_train: TwoPeriodView, view_new_w: np.ndarray,
                          g_spec: LearnerSpec, pi_spec: LearnerSpec,
                          clip: float) -> tuple[np.ndarray, np.ndarray]:
    """Fit g (on controls) and pi on one sample, predict on held-out rows.

    Used to build pseudo-outcomes on validation/test splits: the returned
    values are out-of-sample by construction because ``view_new_w`` rows played
    no part in training.
    """
    d = view_train.d
    ctrl = d == 0
    if not ctrl.any() or ctrl.all():
        raise CrossFitError("training view must contain both groups")
    g_model = fit_regression(view_train.w[ctrl], view_train.s[ctrl], g_spec)
    pi_model = fit_propensity(view_train.w, d, pi_spec, clip)
    return g_model.predict(view_new_w), pi_model.predict_proba(view_new_w)
