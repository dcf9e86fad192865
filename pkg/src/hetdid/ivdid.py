"""Doubly robust local effects among the exposed under an instrumented design.

With binary exposure Z, adoption contrast dD and outcome contrast dY, the
reweighting factor is ``Zhat = (Z - pi) / (1 - pi)`` with pi(W) = P(Z=1 | W),
and the per-row moment pieces are

    A = Zhat * (dY - g_Y(W)),    B = Zhat * (dD - g_D(W)),

with both regressions g_Y, g_D trained on unexposed rows only. mean(A)/mean(B)
estimates the unconditional local effect among exposed compliers; the
conditional function solves min_theta mean(B * theta(X)^2 - 2 * A * theta(X)).
Because sample B can be negative, only the linear final class ships: the
regularized normal system is checked for positive definiteness and an
indefinite one is an error carrying its smallest eigenvalue.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .catt import DEFAULT_RIDGE_SCALE, LinearCattModel, design_matrix
from .crossfit import CrossFitError
from .exceptions import NonConvexSystemError, SpecValidationError, WeakInstrumentError
from .learners import LearnerSpec, fit_propensity, fit_regression
from .panel import FoldAssignment, assign_folds
from .validation import (
    as_binary_vector,
    as_float_matrix,
    as_float_vector,
    check_x_cols,
    readonly,
)

#: Default weak-instrument threshold on |mean(B)|.
DEFAULT_CZ = 0.05
#: Below this, the first stage is numerically zero and the ratio is an error.
FIRST_STAGE_FLOOR = 1e-12


@dataclass(frozen=True)
class IvView:
    """Estimation rows (W, X, Z, dY, dD) for the instrumented design.

    ``w_y`` / ``w_d`` optionally override the conditioning features of the two
    regressions (the lagged-outcome variant passes [W, Y0] and [W, D0]).
    """

    w: np.ndarray
    x_cols: tuple[int, ...]
    z: np.ndarray
    dy: np.ndarray
    dd: np.ndarray
    w_y: np.ndarray | None = None
    w_d: np.ndarray | None = None

    def __post_init__(self):
        w = as_float_matrix(self.w, "w")
        object.__setattr__(self, "w", w)
        n = w.shape[0]
        object.__setattr__(self, "z", as_binary_vector(self.z, "z"))
        object.__setattr__(self, "dy", as_float_vector(self.dy, "dy"))
        dd = as_float_vector(self.dd, "dd")
        if not np.isin(dd, (-1.0, 0.0, 1.0)).all():
            raise ValueError("adoption contrast dd must lie in {-1, 0, 1}")
        object.__setattr__(self, "dd", dd)
        for name in ("z", "dy", "dd"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} misaligned with w")
        object.__setattr__(self, "x_cols", check_x_cols(self.x_cols, w.shape[1]))
        for name in ("w_y", "w_d"):
            m = getattr(self, name)
            if m is not None:
                m = as_float_matrix(m, name)
                if m.shape[0] != n:
                    raise ValueError(f"{name} misaligned with w")
                object.__setattr__(self, name, m)
        readonly(self.w)
        readonly(self.z)
        readonly(self.dy)
        readonly(self.dd)

    @property
    def n_rows(self) -> int:
        return self.w.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.w[:, list(self.x_cols)]

    @property
    def gy_features(self) -> np.ndarray:
        return self.w if self.w_y is None else self.w_y

    @property
    def gd_features(self) -> np.ndarray:
        return self.w if self.w_d is None else self.w_d


@dataclass(frozen=True)
class IvNuisance:
    """Out-of-fold g_Y, g_D (trained on Z=0 rows) and clipped exposure propensity."""

    g_y: np.ndarray
    g_d: np.ndarray
    pi: np.ndarray
    fold: FoldAssignment
    clip: float

    def __post_init__(self):
        n = self.fold.n
        for name in ("g_y", "g_d", "pi"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} misaligned with the fold assignment")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.pi.min() < self.clip or self.pi.max() > 1.0 - self.clip:
            raise ValueError("pi violates the clip bounds")
        readonly(self.g_y)
        readonly(self.g_d)
        readonly(self.pi)


@dataclass(frozen=True)
class LattEstimate:
    """Unconditional local effect with its first-stage diagnostics."""

    value: float
    first_stage: float
    weak_instrument: bool
    threshold: float

    def __float__(self) -> float:
        return self.value


def cross_fit_iv(view: IvView, n_folds: int, gy_spec: LearnerSpec,
                 gd_spec: LearnerSpec, pi_spec: LearnerSpec, clip: float,
                 seed: int) -> IvNuisance:
    """Cross-fit the two unexposed-arm regressions and the exposure propensity."""
    n = view.n_rows
    z = view.z
    folds = assign_folds(n, n_folds, seed, z)
    g_y = np.empty(n)
    g_d = np.empty(n)
    pi = np.empty(n)
    for k in range(folds.k):
        test = folds.fold_of == k
        train = ~test
        unexposed = train & (z == 0)
        if not unexposed.any():
            raise CrossFitError(f"fold {k}: training complement has no Z=0 rows")
        try:
            gy_model = fit_regression(view.gy_features[unexposed], view.dy[unexposed], gy_spec)
            gd_model = fit_regression(view.gd_features[unexposed], view.dd[unexposed], gd_spec)
            pi_model = fit_propensity(view.w[train], z[train], pi_spec, clip)
        except Exception as exc:
            raise CrossFitError(f"fold {k}: {exc}") from exc
        g_y[test] = gy_model.predict(view.gy_features[test])
        g_d[test] = gd_model.predict(view.gd_features[test])
        pi[test] = pi_model.predict_proba(view.w[test])
    return IvNuisance(g_y=g_y, g_d=g_d, pi=pi, fold=folds, clip=clip)


def iv_pseudo(view: IvView, nuis: IvNuisance) -> tuple[np.ndarray, np.ndarray]:
    """Per-row moment pieces A = Zhat*(dY - g_Y), B = Zhat*(dD - g_D)."""
    if nuis.fold.n != view.n_rows:
        raise ValueError("nuisances misaligned with the view")
    zhat = (view.z - nuis.pi) / (1.0 - nuis.pi)
    a = zhat * (view.dy - nuis.g_y)
    b = zhat * (view.dd - nuis.g_d)
    return a, b


def latt(a, b, c_z: float = DEFAULT_CZ) -> LattEstimate:
    """Unconditional local effect mean(A)/mean(B) with a weak-instrument flag."""
    a = as_float_vector(a, "A")
    b = as_float_vector(b, "B")
    if a.shape != b.shape:
        raise ValueError("A and B are misaligned")
    first_stage = float(b.mean())
    if abs(first_stage) < FIRST_STAGE_FLOOR:
        raise WeakInstrumentError(
            f"first stage |mean(B)| = {abs(first_stage):.3g} is below the "
            f"{FIRST_STAGE_FLOOR:g} floor; the ratio is undefined"
        )
    return LattEstimate(
        value=float(a.mean() / first_stage),
        first_stage=first_stage,
        weak_instrument=abs(first_stage) < c_z,
        threshold=c_z,
    )


def load_iv_csv(path, schema, pre: int = 0, post: int = 1, x_cols=(0,),
                lagged: bool = False) -> IvView:
    """Ingest an instrumented design from the long-format CSV schema.

    Reads per-period outcome and treatment columns plus the per-unit exposure
    flag; unlike the plain panel loader this path allows treatment at period 0
    (always-takers) and adoption reversals. With ``lagged`` the outcome
    regression conditions on [W, Y_pre] and the adoption regression on
    [W, D_pre].
    """
    import pandas as pd

    from .exceptions import PanelFormatError
    from .panel import PanelSchema

    if not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_dict(schema)
    if schema.instrument is None or schema.treatment is None:
        raise PanelFormatError("IV ingestion needs instrument and treatment columns")
    df = pd.read_csv(path)
    required = [schema.unit, schema.period, schema.outcome, schema.instrument,
                schema.treatment] + list(schema.covariates)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise PanelFormatError(f"missing column(s) in {path}: {missing}")
    period_labels = sorted(df[schema.period].unique())
    if len(period_labels) <= max(pre, post):
        raise PanelFormatError("pre/post out of range for the file's periods")
    pre_label, post_label = period_labels[pre], period_labels[post]
    unit_ids = sorted(df[schema.unit].unique(), key=str)

    def _wide(col):
        w = df.pivot(index=schema.unit, columns=schema.period, values=col)
        w = w.reindex(unit_ids)
        if w.isna().any().any():
            raise PanelFormatError(f"unbalanced panel in column {col!r}")
        return w

    y = _wide(schema.outcome)
    t = _wide(schema.treatment)
    first = df.sort_values(schema.period, kind="stable").groupby(schema.unit).first()
    first = first.reindex(unit_ids)
    w = first[list(schema.covariates)].to_numpy(dtype=float)
    z = first[schema.instrument].to_numpy()
    y_pre = y[pre_label].to_numpy(dtype=float)
    y_post = y[post_label].to_numpy(dtype=float)
    d_pre = t[pre_label].to_numpy(dtype=float)
    d_post = t[post_label].to_numpy(dtype=float)
    return IvView(
        w=w,
        x_cols=tuple(x_cols),
        z=z,
        dy=y_post - y_pre,
        dd=d_post - d_pre,
        w_y=np.column_stack([w, y_pre]) if lagged else None,
        w_d=np.column_stack([w, d_pre]) if lagged else None,
    )


def fit_dr_clate(a, b, x, final_spec: LearnerSpec,
                 ridge_penalty: float | None = None, c_z: float = DEFAULT_CZ):
    """Minimize mean(B*theta(X)^2 - 2*A*theta(X)) over the linear class.

    The boosted final stage is not offered here: with sign-indefinite per-row
    weights B the Newton leaf step can divide by near-zero hessian mass, so the
    linear class (plus an optional basis expansion) is the supported scope.
    """
    a = as_float_vector(a, "A")
    b = as_float_vector(b, "B")
    x = as_float_matrix(x, "x")
    if not (a.shape[0] == b.shape[0] == x.shape[0]):
        raise ValueError("A, B and x are misaligned")
    if final_spec.kind != "linear":
        raise SpecValidationError(
            "only the linear final class is supported for the instrumented loss "
            "(sample B may be negative, which breaks Newton leaf steps)"
        )
    first_stage = float(b.mean())
    weak = abs(first_stage) < c_z

    phi = design_matrix(x, final_spec.basis)
    lam = ridge_penalty if ridge_penalty is not None else DEFAULT_RIDGE_SCALE * x.shape[0]
    gram = phi.T @ (phi * b[:, None])
    gram = (gram + gram.T) / 2.0
    raw_min_eig = float(np.linalg.eigvalsh(gram).min())
    reg = gram.copy()
    idx = np.diag_indices_from(reg)
    reg[idx[0][1:], idx[1][1:]] += lam
    min_eig = float(np.linalg.eigvalsh(reg).min())
    if min_eig <= 0.0:
        raise NonConvexSystemError(
            f"instrumented sample loss is indefinite after regularization "
            f"(smallest eigenvalue {min_eig:.3g}); the population loss is "
            "convex but this sample is not",
            smallest_eigenvalue=min_eig,
        )
    if raw_min_eig < 0.0:
        warnings.warn(
            "sample instrumented loss is not convex (smallest unregularized "
            f"eigenvalue {raw_min_eig:.3g}); proceeding with the regularized system",
            RuntimeWarning,
            stacklevel=2,
        )
    coef = np.linalg.solve(reg, phi.T @ a)
    model = LinearCattModel(basis=final_spec.basis, penalty=lam)
    model.coef_ = coef
    model.n_features_in_ = x.shape[1]
    theta = phi @ coef
    model.training_loss_ = float(np.mean(b * theta * theta - 2.0 * a * theta))
    model.x_cols = ()
    model.metadata = {
        "learner": "dr_clate",
        "first_stage": first_stage,
        "weak_instrument": weak,
        "smallest_eigenvalue": min_eig,
    }
    return model
