"""Doubly robust estimation of conditional effects on the treated.

The per-row pseudo-outcome is ``Yhat = ((D - pi) / (1 - pi)) * (S - g)`` with
the control-group trend regression g and the clipped group propensity pi. Its
conditional mean given X (times 1/P(D=1|X)) is the effect on the treated, and
regressing it through the incomplete squared loss

    L(theta) = mean(D * theta(X)^2 - 2 * Yhat * theta(X))

projects the effect function onto any hypothesis class over the treated
population. The loss is insensitive to first-order nuisance error (the bias of
the pseudo-outcome is the product of the two nuisance errors), which is what
makes generic ML nuisances usable.

Baselines kept for comparison: the outcome-regression learner (regress
``S - g`` on X over treated rows) and the CATE-style learners built from both
arms' trend regressions.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator

from .boosting import HESSIAN_FLOOR, BoostedTrees
from .crossfit import NuisanceEstimates
from .exceptions import SingularSystemError, SpecValidationError
from .learners import FINAL_KINDS, LearnerSpec
from .linear import _solve_spd
from .panel import TwoPeriodView
from .validation import as_binary_vector, as_float_matrix, as_float_vector, readonly

#: Default final-stage ridge scale: penalty = DEFAULT_RIDGE_SCALE * n.
DEFAULT_RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class PseudoOutcome:
    """Per-row doubly robust targets plus the final-stage features.

    ``d`` plays the reweighting role in the loss; the covariate-shift module
    reuses this container with its environment indicator in the ``d`` slot.
    """

    y_hat: np.ndarray
    d: np.ndarray
    x: np.ndarray
    x_cols: tuple[int, ...] = ()
    provenance: dict | None = None

    def __post_init__(self):
        n = self.y_hat.shape[0]
        object.__setattr__(self, "d", as_binary_vector(self.d, "d"))
        if self.d.shape != (n,):
            raise ValueError("y_hat and d are misaligned")
        if self.x.ndim != 2 or self.x.shape[0] != n:
            raise ValueError("x must be (n, p) aligned with y_hat")
        if not np.all(np.isfinite(self.y_hat)):
            raise ValueError("pseudo-outcome contains non-finite values")
        readonly(self.y_hat)
        readonly(self.d)
        readonly(self.x)

    @property
    def n_rows(self) -> int:
        return self.y_hat.shape[0]


def pseudo_outcome(view: TwoPeriodView, nuis: NuisanceEstimates) -> PseudoOutcome:
    """Build the doubly robust pseudo-outcome from out-of-fold nuisances.

    Treated rows get exactly ``S - g_hat``; control rows get exactly
    ``-(pi_hat / (1 - pi_hat)) * (S - g_hat)``.
    """
    n = view.n_rows
    if nuis.n_rows != n:
        raise ValueError("nuisance estimates are misaligned with the view")
    resid = view.s - nuis.g_hat
    weight = nuis.pi_hat / (1.0 - nuis.pi_hat)
    y_hat = np.where(view.d == 1, resid, -(weight * resid))
    if not np.all(np.isfinite(y_hat)):  # impossible under clipping; assert anyway
        raise FloatingPointError("pseudo-outcome produced non-finite values")
    return PseudoOutcome(
        y_hat=y_hat, d=view.d.copy(), x=view.x, x_cols=view.x_cols,
        provenance={
            "clip": nuis.clip,
            "g_kind": nuis.g_spec.kind if nuis.g_spec else None,
            "pi_kind": nuis.pi_spec.kind if nuis.pi_spec else None,
            "fold_seed": nuis.fold.seed,
            "n_folds": nuis.fold.k,
        },
    )


def dr_loss(theta_vals, pseudo: PseudoOutcome) -> float:
    """Empirical incomplete squared loss mean(D*theta^2 - 2*Yhat*theta)."""
    theta = as_float_vector(theta_vals, "theta_vals")
    if theta.shape[0] != pseudo.n_rows:
        raise ValueError("theta values are misaligned with the pseudo-outcome")
    return float(np.mean(pseudo.d * theta * theta - 2.0 * pseudo.y_hat * theta))


def att(pseudo: PseudoOutcome) -> float:
    """Unconditional effect on the treated: mean(Yhat) / mean(D)."""
    if pseudo.d.sum() == 0:
        raise ValueError("no treated rows; the effect on the treated is undefined")
    return float(pseudo.y_hat.mean() / pseudo.d.mean())


def design_matrix(x: np.ndarray, basis: str) -> np.ndarray:
    """Final-stage linear feature map: intercept plus raw (or quadratic) terms."""
    n, p = x.shape
    cols = [np.ones((n, 1)), x]
    if basis == "quadratic":
        cols.append(x * x)
        cols.extend(x[:, [i]] * x[:, [j]] for i, j in combinations(range(p), 2))
    elif basis != "raw":
        raise SpecValidationError(f"unknown basis {basis!r}")
    return np.hstack(cols)


def solve_weighted_linear(phi: np.ndarray, weights: np.ndarray,
                          target: np.ndarray, penalty: float,
                          context: str) -> np.ndarray:
    """Solve ``(Phi' diag(w) Phi + penalty*I) beta = Phi' target``.

    The intercept (column 0) is unpenalized. Weights must be non-negative
    here; the instrumented module has its own indefinite-system handling.
    """
    gram = phi.T @ (phi * weights[:, None])
    idx = np.diag_indices_from(gram)
    gram[idx[0][1:], idx[1][1:]] += penalty
    return _solve_spd(gram, phi.T @ target, context,
                      suggested_penalty=DEFAULT_RIDGE_SCALE * phi.shape[0])


class LinearCattModel(BaseEstimator):
    """Exact minimizer of the empirical incomplete squared loss over a linear map.

    ``fit`` solves the weighted normal equations; with all-ones weights this is
    ordinary (ridge) least squares, which is how the baseline learners reuse it.
    """

    final_kind = "linear"

    def __init__(self, basis: str = "raw", penalty: float | None = None):
        self.basis = basis
        self.penalty = penalty

    def fit(self, x, weights, targets):
        x = as_float_matrix(x, "x")
        weights = np.asarray(weights, dtype=float)
        targets = as_float_vector(targets, "targets")
        phi = design_matrix(x, self.basis)
        lam = self.penalty if self.penalty is not None else DEFAULT_RIDGE_SCALE * x.shape[0]
        try:
            coef = solve_weighted_linear(phi, weights, targets, lam, "final linear stage")
        except SingularSystemError as exc:
            raise SingularSystemError(
                f"final linear stage: singular system at penalty={lam:g}; "
                f"suggested penalty {exc.suggested_penalty:g}",
                suggested_penalty=exc.suggested_penalty,
            ) from exc
        self.coef_ = coef
        self.n_features_in_ = x.shape[1]
        theta = phi @ coef
        self.training_loss_ = float(
            np.mean(weights * theta * theta - 2.0 * targets * theta)
        )
        return self

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} feature column(s), got shape {x.shape}"
            )
        return design_matrix(x, self.basis) @ self.coef_


class GbtCattModel(BaseEstimator):
    """Boosted-tree minimizer of the incomplete squared loss.

    Per-row Newton quantities g = D*theta - Yhat and h = D; each leaf takes the
    guarded step ``sum(Yhat - D*theta) / (sum(D) + 1e-6)`` and the split finder
    requires hessian mass (treated rows) on both sides, so the guard never
    drives a leaf value where D-mass exists.
    """

    final_kind = "gbt"

    def __init__(self, n_rounds: int = 200, learning_rate: float = 0.1,
                 max_depth: int = 3, min_samples_leaf: int = 1, seed: int = 0):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.seed = seed

    def fit(self, x, weights, targets):
        x = as_float_matrix(x, "x")
        w = np.asarray(weights, dtype=float)
        y_hat = as_float_vector(targets, "targets")
        if w.sum() <= 0:
            raise ValueError("no weight mass on any row; cannot fit")

        def grad_hess(pred):
            return w * pred - y_hat, w

        def loss(pred, rows):
            t = pred[rows]
            return float(np.mean(w[rows] * t * t - 2.0 * y_hat[rows] * t))

        init = float(y_hat.sum() / (w.sum() + HESSIAN_FLOOR))
        self.booster_ = BoostedTrees(
            n_rounds=self.n_rounds, learning_rate=self.learning_rate,
            max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
            min_child_hessian=1.0, seed=self.seed,
        ).fit(x, grad_hess, loss, init_value=init)
        self.loss_path_ = list(self.booster_.train_loss_path_)
        self.training_loss_ = self.loss_path_[-1] if self.loss_path_ else loss(
            np.full(x.shape[0], init), np.arange(x.shape[0]))
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, x) -> np.ndarray:
        x = as_float_matrix(x, "x")
        if x.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} feature column(s), got shape {x.shape}"
            )
        return self.booster_.raw_predict(x)


def _make_final_model(final_spec: LearnerSpec, ridge_penalty: float | None):
    if final_spec.kind not in FINAL_KINDS:
        raise SpecValidationError(
            f"final-stage kind must be one of {FINAL_KINDS}, got {final_spec.kind!r}"
        )
    if final_spec.kind == "linear":
        return LinearCattModel(basis=final_spec.basis, penalty=ridge_penalty)
    return GbtCattModel(
        n_rounds=final_spec.n_rounds, learning_rate=final_spec.learning_rate,
        max_depth=final_spec.max_depth, min_samples_leaf=final_spec.min_samples_leaf,
        seed=final_spec.seed,
    )


def fit_dr_catt(pseudo: PseudoOutcome, final_spec: LearnerSpec,
                ridge_penalty: float | None = None):
    """Fit the doubly robust final stage on the pseudo-outcome.

    The linear class solves the normal equations of the incomplete squared
    loss exactly (default slope penalty 1e-6 * n guarantees non-singularity, a
    documented departure from pure empirical risk minimization).
    """
    if pseudo.d.sum() == 0:
        raise ValueError("at least one treated row is required")
    model = _make_final_model(final_spec, ridge_penalty)
    model.fit(pseudo.x, pseudo.d.astype(float), pseudo.y_hat)
    model.x_cols = pseudo.x_cols
    model.metadata = dict(pseudo.provenance or {}, learner="dr")
    return model


def _fit_plain_regression(x, targets, final_spec: LearnerSpec,
                          ridge_penalty: float | None):
    """Squared-error final stage (weights identically 1) for the baselines."""
    model = _make_final_model(final_spec, ridge_penalty)
    model.fit(x, np.ones(x.shape[0]), np.asarray(targets, dtype=float))
    return model


def fit_or_catt(view: TwoPeriodView, nuis: NuisanceEstimates,
                final_spec: LearnerSpec, ridge_penalty: float | None = None):
    """Outcome-regression learner: regress S - g_hat on X over treated rows."""
    treated = view.d == 1
    if not treated.any():
        raise ValueError("no treated rows")
    resid = view.s[treated] - nuis.g_hat[treated]
    model = _fit_plain_regression(view.x[treated], resid, final_spec, ridge_penalty)
    model.x_cols = view.x_cols
    model.metadata = {"learner": "or"}
    return model


def _cate_rows(view: TwoPeriodView, rows: str) -> np.ndarray:
    if rows == "treated":
        mask = view.d == 1
        if not mask.any():
            raise ValueError("no treated rows")
        return mask
    if rows == "all":
        return np.ones(view.n_rows, dtype=bool)
    raise ValueError("rows must be 'treated' or 'all'")


def fit_cate_or(view: TwoPeriodView, nuis_treated: np.ndarray,
                nuis: NuisanceEstimates, final_spec: LearnerSpec,
                ridge_penalty: float | None = None, rows: str = "treated"):
    """CATE-style outcome-regression baseline: regress g1_hat - g0_hat on X."""
    g1 = as_float_vector(nuis_treated, "nuis_treated")
    mask = _cate_rows(view, rows)
    target = g1[mask] - nuis.g_hat[mask]
    model = _fit_plain_regression(view.x[mask], target, final_spec, ridge_penalty)
    model.x_cols = view.x_cols
    model.metadata = {"learner": "cate_or", "rows": rows}
    return model


def cate_dr_pseudo_outcome(view: TwoPeriodView, nuis_treated: np.ndarray,
                           nuis: NuisanceEstimates) -> np.ndarray:
    """Both-arms doubly robust pseudo-outcome used by the CATE-DR baseline.

    ``g1 - g0 + (D/pi - (1-D)/(1-pi)) * (S - g_D)``, divisions guarded by the
    propensity clip.
    """
    g1 = as_float_vector(nuis_treated, "nuis_treated")
    if g1.shape[0] != view.n_rows:
        raise ValueError("treated-arm nuisance misaligned with the view")
    d = view.d
    g_own = np.where(d == 1, g1, nuis.g_hat)
    correction = (d / nuis.pi_hat - (1 - d) / (1.0 - nuis.pi_hat)) * (view.s - g_own)
    return g1 - nuis.g_hat + correction


def fit_cate_dr(view: TwoPeriodView, nuis_treated: np.ndarray,
                nuis: NuisanceEstimates, final_spec: LearnerSpec,
                ridge_penalty: float | None = None, rows: str = "treated"):
    """CATE-DR baseline: regress the both-arms pseudo-outcome on X.

    ``rows="treated"`` restricts the regression to D = 1 rows; ``rows="all"``
    is the whole-population projection, whose conditioning distribution makes
    it a biased estimate of the effect on the treated once X is a strict
    subset of W and the groups' covariates differ.
    """
    ydr = cate_dr_pseudo_outcome(view, nuis_treated, nuis)
    mask = _cate_rows(view, rows)
    model = _fit_plain_regression(view.x[mask], ydr[mask], final_spec, ridge_penalty)
    model.x_cols = view.x_cols
    model.metadata = {"learner": "cate_dr", "rows": rows}
    return model


def predict(model, x) -> np.ndarray:
    """Deterministic effect predictions with an arity check."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features_in_:
        raise ValueError(
            f"model expects {model.n_features_in_} feature column(s), got shape {x.shape}"
        )
    return model.predict(x)
