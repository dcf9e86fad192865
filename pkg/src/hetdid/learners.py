"""Learner specifications and the fit entry points for nuisance models.

A ``LearnerSpec`` is the config-file representation of a model class plus its
hyperparameters; ``fit_regression`` / ``fit_propensity`` turn a spec into a
fitted estimator. Penalty grids trigger K-fold cross-validation on the
training data (squared error for regressions, log-loss for propensities).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .boosting import GradientBoostedClassifier, GradientBoostedRegressor
from .exceptions import SpecValidationError
from .linear import IrlsLogisticRegression, LassoRegression, RidgeRegression
from .validation import as_binary_vector, as_float_matrix, as_float_vector

REGRESSION_KINDS = ("ridge", "lasso", "gbt_squared")
PROPENSITY_KINDS = ("logistic", "gbt_logistic")
FINAL_KINDS = ("linear", "gbt")


@dataclass(frozen=True)
class LearnerSpec:
    """Model kind plus hyperparameters, expressible in the run config.

    ``penalty`` is the L2/L1 strength for ridge/lasso (ignored by gbt kinds);
    when ``penalty_grid`` is set instead, the penalty is chosen by
    ``cv_folds``-fold cross-validation. ``basis`` controls the final linear
    stage's feature map ("raw" or "quadratic").
    """

    kind: str
    penalty: float | None = None
    penalty_grid: tuple[float, ...] | None = None
    cv_folds: int = 5
    max_depth: int = 3
    learning_rate: float = 0.1
    n_rounds: int = 200
    min_samples_leaf: int = 1
    patience: int | None = None
    basis: str = "raw"
    seed: int = 0

    def __post_init__(self):
        known = set(REGRESSION_KINDS) | set(PROPENSITY_KINDS) | set(FINAL_KINDS)
        if self.kind not in known:
            raise SpecValidationError(f"unknown learner kind {self.kind!r}")
        if self.penalty is not None and self.penalty < 0:
            raise SpecValidationError("penalty must be >= 0")
        if self.penalty_grid is not None:
            object.__setattr__(self, "penalty_grid", tuple(float(p) for p in self.penalty_grid))
            if any(p < 0 for p in self.penalty_grid):
                raise SpecValidationError("penalty grid values must be >= 0")
        if self.cv_folds < 2:
            raise SpecValidationError("cv_folds must be >= 2")
        if self.max_depth < 1:
            raise SpecValidationError("tree depth must be >= 1")
        if self.n_rounds < 1:
            raise SpecValidationError("boosting rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise SpecValidationError("learning rate must be in (0, 1]")
        if self.basis not in ("raw", "quadratic"):
            raise SpecValidationError(f"unknown basis {self.basis!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["penalty_grid"] is not None:
            d["penalty_grid"] = list(d["penalty_grid"])
        return d

    @classmethod
    def from_dict(cls, d) -> "LearnerSpec":
        d = dict(d)
        if d.get("penalty_grid") is not None:
            d["penalty_grid"] = tuple(d["penalty_grid"])
        return cls(**d)


def _cv_folds(n: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.permutation(n) % k


def _select_penalty(build, grid, score, x, y, k: int, seed: int) -> float:
    """Pick the grid penalty minimizing mean out-of-fold score."""
    if len(grid) == 0:
        raise SpecValidationError("empty penalty grid with CV requested")
    if len(grid) == 1:
        return grid[0]
    fold = _cv_folds(x.shape[0], k, seed)
    means = []
    for lam in grid:
        scores = []
        for f in range(k):
            tr = fold != f
            model = build(lam).fit(x[tr], y[tr])
            scores.append(score(model, x[~tr], y[~tr]))
        means.append(float(np.mean(scores)))
    return grid[int(np.argmin(means))]


def _mse_score(model, x, y) -> float:
    return float(np.mean((model.predict(x) - y) ** 2))


def _logloss_score(model, x, y) -> float:
    z = model.decision_function(x)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def fit_regression(features, labels, spec: LearnerSpec):
    """Fit the outcome-regression learner named by ``spec``."""
    if spec.kind not in REGRESSION_KINDS:
        raise SpecValidationError(
            f"spec kind {spec.kind!r} is not a regression kind {REGRESSION_KINDS}"
        )
    x = as_float_matrix(features, "features")
    y = as_float_vector(labels, "labels")
    if spec.kind == "gbt_squared":
        return GradientBoostedRegressor(
            n_rounds=spec.n_rounds, learning_rate=spec.learning_rate,
            max_depth=spec.max_depth, min_samples_leaf=spec.min_samples_leaf,
            patience=spec.patience, seed=spec.seed,
        ).fit(x, y)
    build = (lambda lam: RidgeRegression(penalty=lam)) if spec.kind == "ridge" \
        else (lambda lam: LassoRegression(penalty=lam))
    if spec.penalty_grid is not None:
        lam = _select_penalty(build, spec.penalty_grid, _mse_score, x, y,
                              spec.cv_folds, spec.seed)
    elif spec.penalty is not None:
        lam = spec.penalty
    else:
        lam = 0.0 if spec.kind == "ridge" else 0.01
    model = build(lam).fit(x, y)
    model.selected_penalty_ = lam
    return model


class ClippedPropensity:
    """Wraps a classifier so predictions land in [clip, 1 - clip] exactly."""

    def __init__(self, model, clip: float):
        if not 0.0 < clip < 0.5:
            raise SpecValidationError("clip must be in (0, 0.5)")
        self.model = model
        self.clip = clip

    def predict_proba(self, features) -> np.ndarray:
        p = self.model.predict_proba(features)
        return np.clip(p, self.clip, 1.0 - self.clip)


def fit_propensity(features, labels, spec: LearnerSpec, clip: float = 0.01
                   ) -> ClippedPropensity:
    """Fit the group-membership learner named by ``spec``; output is clipped."""
    if spec.kind not in PROPENSITY_KINDS:
        raise SpecValidationError(
            f"spec kind {spec.kind!r} is not a propensity kind {PROPENSITY_KINDS}"
        )
    x = as_float_matrix(features, "features")
    y = as_binary_vector(labels, "labels")
    if spec.kind == "gbt_logistic":
        model = GradientBoostedClassifier(
            n_rounds=spec.n_rounds, learning_rate=spec.learning_rate,
            max_depth=spec.max_depth, min_samples_leaf=spec.min_samples_leaf,
            patience=spec.patience, seed=spec.seed,
        ).fit(x, y)
        return ClippedPropensity(model, clip)
    model = IrlsLogisticRegression().fit(x, y)
    return ClippedPropensity(model, clip)
