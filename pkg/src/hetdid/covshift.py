"""Conditional linear functionals of a regression under covariate shift.

Labels Y exist only where E = 0 (the source environment); the estimand is the
conditional mean of a linear functional m(Z; g) of g(W) = E[Y | W] over the
target environment (E = 1), conditioned on a subset X of W. The orthogonal
pseudo-outcome is

    Yhat = E * m(Z; g_hat) + (1 - E) * (pi_hat / (1 - pi_hat)) * alpha * (Y - g_hat)

with pi(W) = P(E = 1 | W) and the Riesz weight alpha(W) of the functional.
Target-row labels are never read: the source term is computed on E = 0 rows
only. With m = S - g, alpha = -1 and E = D this reproduces the treated-effects
pseudo-outcome bit for bit, which the tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catt import PseudoOutcome, fit_dr_catt
from .exceptions import SpecValidationError
from .learners import LearnerSpec, fit_propensity, fit_regression
from .panel import FoldAssignment, assign_folds
from .validation import (
    as_binary_vector,
    as_float_matrix,
    as_float_vector,
    check_x_cols,
    readonly,
)

MOMENT_KINDS = ("identity", "cate_diff", "residual")


@dataclass(frozen=True)
class ShiftView:
    """Estimation rows for the shifted-functional problem.

    ``y`` is required (finite) only on source rows (e == 0); target-row entries
    may hold anything, including NaN, and are never read. ``s`` is an optional
    per-row moment outcome readable everywhere (used by the "residual" moment);
    ``d`` is the randomized-treatment column needed by the cate-style moment.
    """

    w: np.ndarray
    x_cols: tuple[int, ...]
    e: np.ndarray
    y: np.ndarray
    s: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        w = as_float_matrix(self.w, "w")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "e", as_binary_vector(self.e, "e"))
        n = w.shape[0]
        if self.e.shape != (n,):
            raise ValueError("e and w are misaligned")
        y = np.asarray(self.y, dtype=float)
        if y.shape != (n,):
            raise ValueError("y and w are misaligned")
        src = self.e == 0
        if not np.all(np.isfinite(y[src])):
            raise ValueError("label Y missing or non-finite on a source (E=0) row")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_cols", check_x_cols(self.x_cols, w.shape[1]))
        if self.s is not None:
            object.__setattr__(self, "s", as_float_vector(self.s, "s"))
            if self.s.shape != (n,):
                raise ValueError("s and w are misaligned")
        if self.d is not None:
            object.__setattr__(self, "d", as_binary_vector(self.d, "d"))
            if self.d.shape != (n,):
                raise ValueError("d and w are misaligned")
        readonly(self.w)
        readonly(self.e)
        readonly(self.y)

    @property
    def n_rows(self) -> int:
        return self.w.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.w[:, list(self.x_cols)]


def load_shift_csv(path, schema: dict) -> tuple[ShiftView, dict]:
    """Read a flat CSV into a ShiftView.

    ``schema`` maps roles to column names: required ``e``, ``y``,
    ``covariates`` (list) and ``x_cols`` (list of covariate names); optional
    ``s``, ``d``, ``alpha`` (user Riesz table) and ``pi`` (known shift
    probabilities). Returns the view plus a dict of the optional extra columns.
    """
    import pandas as pd

    df = pd.read_csv(path)
    required = [schema["e"], schema["y"]] + list(schema["covariates"])
    for opt in ("s", "d", "alpha", "pi"):
        if schema.get(opt):
            required.append(schema[opt])
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SpecValidationError(f"missing column(s) in {path}: {missing}")
    cov_names = list(schema["covariates"])
    x_cols = tuple(cov_names.index(c) for c in schema["x_cols"])
    view = ShiftView(
        w=df[cov_names].to_numpy(dtype=float),
        x_cols=x_cols,
        e=df[schema["e"]].to_numpy(),
        y=df[schema["y"]].to_numpy(dtype=float),
        s=df[schema["s"]].to_numpy(dtype=float) if schema.get("s") else None,
        d=df[schema["d"]].to_numpy() if schema.get("d") else None,
    )
    extras = {}
    if schema.get("alpha"):
        extras["alpha"] = df[schema["alpha"]].to_numpy(dtype=float)
    if schema.get("pi"):
        extras["pi"] = df[schema["pi"]].to_numpy(dtype=float)
    return view, extras


@dataclass(frozen=True)
class RieszSpec:
    """How to produce the per-row Riesz weight alpha.

    kinds: ``constant`` (value; -1 for the treated-effects instance, +1 for
    plain shifted means), ``cate_shift`` (needs the cross-fitted, clipped
    q_hat = P(D=1 | W, E=1) and the row's D), and ``user_table`` (caller
    supplies alpha per row, e.g. read from a CSV column).
    """

    kind: str
    value: float = -1.0
    q_hat: np.ndarray | None = None
    clip: float | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "cate_shift", "user_table"):
            raise SpecValidationError(f"unknown Riesz kind {self.kind!r}")
        if self.kind == "cate_shift":
            if self.q_hat is None or self.clip is None:
                raise SpecValidationError("cate_shift needs q_hat and its clip bound")
            q = as_float_vector(self.q_hat, "q_hat")
            if q.min() < self.clip or q.max() > 1.0 - self.clip:
                raise SpecValidationError("q_hat violates its clip bounds")
        if self.kind == "user_table" and self.table is None:
            raise SpecValidationError("user_table needs per-row alpha values")

    def values(self, view: ShiftView) -> np.ndarray:
        if self.kind == "constant":
            return np.full(view.n_rows, float(self.value))
        if self.kind == "user_table":
            alpha = as_float_vector(self.table, "alpha table")
            if alpha.shape[0] != view.n_rows:
                raise ValueError("alpha table misaligned with the view")
            return alpha
        if view.d is None:
            raise SpecValidationError("cate_shift Riesz needs the view's D column")
        q = np.asarray(self.q_hat, dtype=float)
        return view.d / q - (1 - view.d) / (1.0 - q)


def moment_values(kind: str, g_hat=None, g1_hat=None, g0_hat=None, s=None
                  ) -> np.ndarray:
    """Evaluate the linear functional m(Z; g_hat) per row.

    ``identity`` -> g_hat; ``cate_diff`` -> g(1,W) - g(0,W), needing g at both
    treatment arms; ``residual`` -> s - g_hat (the treated-effects instance).
    """
    if kind == "identity":
        if g_hat is None:
            raise SpecValidationError("identity moment needs g_hat")
        return np.asarray(g_hat, dtype=float)
    if kind == "cate_diff":
        if g1_hat is None or g0_hat is None:
            raise SpecValidationError("cate_diff moment needs g at both arms")
        return np.asarray(g1_hat, dtype=float) - np.asarray(g0_hat, dtype=float)
    if kind == "residual":
        if s is None or g_hat is None:
            raise SpecValidationError("residual moment needs the outcome column s and g_hat")
        return np.asarray(s, dtype=float) - np.asarray(g_hat, dtype=float)
    raise SpecValidationError(f"unknown moment kind {kind!r} (use one of {MOMENT_KINDS})")


def covshift_pseudo_outcome(view: ShiftView, g_hat, pi_hat, alpha: RieszSpec,
                            m_kind: str, clip: float = 0.01,
                            g1_hat=None, g0_hat=None) -> PseudoOutcome:
    """Orthogonal pseudo-outcome; the environment flag rides in the D slot.

    ``pi_hat`` must already be clipped into [clip, 1-clip]; known-shift callers
    may pass exact sampling probabilities. Labels on target rows are never
    touched: the source-branch arithmetic runs on E = 0 rows only.
    """
    n = view.n_rows
    g_hat = as_float_vector(g_hat, "g_hat")
    pi_hat = np.asarray(pi_hat, dtype=float)
    if g_hat.shape[0] != n or pi_hat.shape != (n,):
        raise ValueError("nuisance arrays misaligned with the view")
    if pi_hat.min() < clip - 1e-12 or pi_hat.max() > 1.0 - clip + 1e-12:
        raise ValueError("pi_hat is not clipped to [clip, 1-clip]")
    m_vals = moment_values(m_kind, g_hat=g_hat, g1_hat=g1_hat, g0_hat=g0_hat,
                           s=view.s)
    alpha_vals = alpha.values(view)
    if not np.all(np.isfinite(alpha_vals)):
        raise ValueError("Riesz weights contain non-finite values")

    tgt = view.e == 1
    y_hat = np.empty(n)
    y_hat[tgt] = m_vals[tgt]
    src = ~tgt
    w_src = pi_hat[src] / (1.0 - pi_hat[src])
    y_hat[src] = w_src * alpha_vals[src] * (view.y[src] - g_hat[src])
    if not np.all(np.isfinite(y_hat)):
        raise FloatingPointError("pseudo-outcome produced non-finite values")
    return PseudoOutcome(
        y_hat=y_hat, d=view.e.copy(), x=view.x, x_cols=view.x_cols,
        provenance={"clip": clip, "moment": m_kind, "riesz": alpha.kind},
    )


def fit_covshift_functional(pseudo: PseudoOutcome, final_spec: LearnerSpec,
                            ridge_penalty: float | None = None):
    """Final stage for the shifted functional; identical mechanics to the
    treated-effects fit with E in the role of D."""
    model = fit_dr_catt(pseudo, final_spec, ridge_penalty)
    model.metadata = dict(model.metadata, learner="covshift")
    return model


@dataclass(frozen=True)
class ShiftNuisances:
    """Cross-fitted nuisances for the shifted-functional problem."""

    g_hat: np.ndarray
    pi_hat: np.ndarray
    fold: FoldAssignment
    clip: float
    g1_hat: np.ndarray | None = None
    g0_hat: np.ndarray | None = None
    q_hat: np.ndarray | None = None


def cross_fit_shift(view: ShiftView, n_folds: int, g_spec: LearnerSpec,
                    pi_spec: LearnerSpec, clip: float, seed: int,
                    m_kind: str = "identity", q_spec: LearnerSpec | None = None
                    ) -> ShiftNuisances:
    """Cross-fit g (source rows only), pi = P(E=1 | W), and the extras.

    For ``cate_diff`` the regression is a single model on (D, W) features
    (trained on source rows) evaluated at both treatment arms; ``q_spec``
    additionally cross-fits q(W) = P(D=1 | W, E=1) for the cate-shift Riesz.
    """
    n = view.n_rows
    e = view.e
    folds = assign_folds(n, n_folds, seed, e)
    g_hat = np.empty(n)
    pi_hat = np.empty(n)
    g1_hat = np.empty(n) if m_kind == "cate_diff" else None
    g0_hat = np.empty(n) if m_kind == "cate_diff" else None
    q_hat = np.empty(n) if q_spec is not None else None
    needs_d = m_kind == "cate_diff" or q_spec is not None
    if needs_d and view.d is None:
        raise SpecValidationError("this configuration needs the view's D column")

    for k in range(folds.k):
        test = folds.fold_of == k
        train = ~test
        src = train & (e == 0)
        if m_kind == "cate_diff":
            feats = np.column_stack([view.d[src], view.w[src]])
            g_model = fit_regression(feats, view.y[src], g_spec)
            w_test = view.w[test]
            ones = np.ones(int(test.sum()))
            g1_hat[test] = g_model.predict(np.column_stack([ones, w_test]))
            g0_hat[test] = g_model.predict(np.column_stack([0.0 * ones, w_test]))
            g_hat[test] = np.where(view.d[test] == 1, g1_hat[test], g0_hat[test])
        else:
            g_model = fit_regression(view.w[src], view.y[src], g_spec)
            g_hat[test] = g_model.predict(view.w[test])
        pi_model = fit_propensity(view.w[train], e[train], pi_spec, clip)
        pi_hat[test] = pi_model.predict_proba(view.w[test])
        if q_spec is not None:
            tgt_train = train & (e == 1)
            q_model = fit_propensity(view.w[tgt_train], view.d[tgt_train], q_spec, clip)
            q_hat[test] = q_model.predict_proba(view.w[test])

    return ShiftNuisances(g_hat=g_hat, pi_hat=pi_hat, fold=folds, clip=clip,
                          g1_hat=g1_hat, g0_hat=g0_hat, q_hat=q_hat)
