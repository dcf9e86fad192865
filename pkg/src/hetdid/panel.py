"""Panel data containers and reshaping into the two-period estimation view.

The estimation row everywhere downstream is ``(W, X, D, S)``: full controls W,
a heterogeneity subset X (column indices into W, never copied data), a binary
group indicator D and a real outcome contrast S. Under the parallel-trends
transform S is the post-minus-pre outcome difference; under the lagged-outcome
transform S is the post outcome and the pre outcome joins W as a regressor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import PanelFormatError
from .validation import as_binary_vector, check_x_cols, readonly

#: Cohort value for units that are never treated.
NEVER_TREATED = -1

PARALLEL_TRENDS = "parallel_trends"
LAGGED_OUTCOME = "lagged_outcome"
TRANSFORMS = (PARALLEL_TRENDS, LAGGED_OUTCOME)


@dataclass(frozen=True)
class PanelSchema:
    """Column-name mapping for long-format panel CSV files.

    ``covariates`` lists the time-invariant covariate columns in order.
    ``instrument`` and ``treatment`` are optional per-unit / per-period
    binary columns (the latter is only needed for instrumented designs).
    """

    unit: str
    period: str
    outcome: str
    cohort: str
    covariates: tuple[str, ...]
    instrument: str | None = None
    treatment: str | None = None

    @classmethod
    def from_dict(cls, d) -> "PanelSchema":
        return cls(
            unit=d["unit"],
            period=d["period"],
            outcome=d["outcome"],
            cohort=d["cohort"],
            covariates=tuple(d["covariates"]),
            instrument=d.get("instrument"),
            treatment=d.get("treatment"),
        )


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel: n units observed at periods 0..T-1.

    ``cohort`` holds the first-treated period per unit (``NEVER_TREATED`` for
    never-treated units). Period labels are normalized to consecutive integers
    at ingest; calendar gaps are the caller's responsibility to encode as
    covariates.
    """

    unit_ids: tuple
    outcomes: np.ndarray          # (n, T)
    cohort: np.ndarray            # (n,) int, NEVER_TREATED or 1..T
    covariates: np.ndarray        # (n, d)
    covariate_names: tuple[str, ...]
    instrument: np.ndarray | None = None   # (n,) 0/1
    treatment: np.ndarray | None = None    # (n, T) 0/1, instrumented designs only
    period_labels: tuple = field(default=())

    def __post_init__(self):
        n, t = self.outcomes.shape
        if len(self.unit_ids) != n:
            raise PanelFormatError("unit_ids and outcomes are misaligned")
        if t < 1:
            raise PanelFormatError("panel needs at least one period")
        if not np.all(np.isfinite(self.outcomes)):
            raise PanelFormatError("outcomes contain non-finite values")
        if self.cohort.shape != (n,):
            raise PanelFormatError("cohort and outcomes are misaligned")
        bad = (self.cohort != NEVER_TREATED) & ((self.cohort < 1) | (self.cohort > t))
        if bad.any():
            uid = self.unit_ids[int(np.nonzero(bad)[0][0])]
            raise PanelFormatError(
                f"unit {uid!r} treated at period 0 or outside 1..T (cohort must be >= 1)"
            )
        if self.covariates.shape[0] != n or self.covariates.ndim != 2:
            raise PanelFormatError("covariates must be (n, d) and aligned with units")
        if not np.all(np.isfinite(self.covariates)):
            raise PanelFormatError("covariates contain non-finite values")
        if len(self.covariate_names) != self.covariates.shape[1]:
            raise PanelFormatError("covariate_names and covariates are misaligned")
        if self.instrument is not None and self.instrument.shape != (n,):
            raise PanelFormatError("instrument and units are misaligned")
        if self.treatment is not None and self.treatment.shape != (n, t):
            raise PanelFormatError("treatment matrix and outcomes are misaligned")
        for arr in (self.outcomes, self.cohort, self.covariates,
                    self.instrument, self.treatment):
            if arr is not None:
                readonly(arr)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]


@dataclass(frozen=True)
class TwoPeriodView:
    """The canonical estimation rows (W, X, D, S) with unit provenance."""

    w: np.ndarray                  # (n, d) controls, possibly augmented
    x_cols: tuple[int, ...]        # heterogeneity subset, indices into w
    d: np.ndarray                  # (n,) 0/1 group indicator
    s: np.ndarray                  # (n,) outcome contrast
    source_unit: tuple
    w_names: tuple[str, ...]
    transform: str = PARALLEL_TRENDS

    def __post_init__(self):
        n = self.w.shape[0]
        if self.d.shape != (n,) or self.s.shape != (n,):
            raise PanelFormatError("view arrays are misaligned")
        object.__setattr__(self, "d", as_binary_vector(self.d, "d"))
        if not np.all(np.isfinite(self.s)):
            raise PanelFormatError("outcome contrast S contains non-finite values")
        object.__setattr__(self, "x_cols", check_x_cols(self.x_cols, self.w.shape[1]))
        if len(self.w_names) != self.w.shape[1]:
            raise PanelFormatError("w_names and w are misaligned")
        if len(self.source_unit) != n:
            raise PanelFormatError("source_unit and rows are misaligned")
        readonly(self.w)
        readonly(self.d)
        readonly(self.s)

    @property
    def n_rows(self) -> int:
        return self.w.shape[0]

    @property
    def x(self) -> np.ndarray:
        """Heterogeneity feature matrix (a column view of W)."""
        return self.w[:, list(self.x_cols)]

    @property
    def x_names(self) -> tuple[str, ...]:
        return tuple(self.w_names[c] for c in self.x_cols)


@dataclass(frozen=True)
class FoldAssignment:
    """Deterministic fold labels in 0..K-1, stratified by the group indicator."""

    n: int
    k: int
    fold_of: np.ndarray
    seed: int

    def __post_init__(self):
        if self.fold_of.shape != (self.n,):
            raise ValueError("fold_of must have length n")
        counts = np.bincount(self.fold_of, minlength=self.k)
        if len(counts) != self.k or (counts == 0).any():
            raise ValueError("every fold must be non-empty")
        readonly(self.fold_of)


def load_panel_csv(path, schema) -> PanelDataset:
    """Load and validate a long-format panel CSV (one row per unit-period).

    Periods are re-indexed to 0..T-1 in sorted order of the distinct period
    labels; the cohort column holds the period label of first treatment or the
    sentinel string ``"never"``. Row order in the file does not matter.
    """
    if not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_dict(schema)
    df = pd.read_csv(path)
    required = [schema.unit, schema.period, schema.outcome, schema.cohort]
    required += list(schema.covariates)
    if schema.instrument:
        required.append(schema.instrument)
    if schema.treatment:
        required.append(schema.treatment)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise PanelFormatError(f"missing column(s) in {path}: {missing}")

    period_labels = tuple(sorted(df[schema.period].unique()))
    period_index = {p: i for i, p in enumerate(period_labels)}
    n_periods = len(period_labels)
    unit_ids = tuple(sorted(df[schema.unit].unique(), key=str))
    unit_index = {u: i for i, u in enumerate(unit_ids)}
    n = len(unit_ids)

    outcomes = np.full((n, n_periods), np.nan)
    treatment = np.full((n, n_periods), np.nan) if schema.treatment else None
    seen = np.zeros((n, n_periods), dtype=bool)
    for col in (schema.outcome,) + schema.covariates:
        if not pd.api.types.is_numeric_dtype(df[col]):
            coerced = pd.to_numeric(df[col], errors="coerce")
            if coerced.isna().any():
                raise PanelFormatError(f"non-numeric value in column {col!r}")
            df[col] = coerced

    ui = df[schema.unit].map(unit_index).to_numpy()
    pi = df[schema.period].map(period_index).to_numpy()
    if df.duplicated(subset=[schema.unit, schema.period]).any():
        raise PanelFormatError("duplicate (unit, period) rows in panel file")
    seen[ui, pi] = True
    outcomes[ui, pi] = df[schema.outcome].to_numpy(dtype=float)
    if treatment is not None:
        treatment[ui, pi] = df[schema.treatment].to_numpy(dtype=float)

    if not seen.all():
        u, p = np.nonzero(~seen)
        raise PanelFormatError(
            f"unbalanced panel: unit {unit_ids[u[0]]!r} lacks period "
            f"{period_labels[p[0]]!r}"
        )

    # Covariates and cohort are per-unit constants; verify and collect them.
    covariates = np.empty((n, len(schema.covariates)))
    cohort = np.empty(n, dtype=np.int64)
    instrument = np.empty(n, dtype=np.int64) if schema.instrument else None
    grouped = df.sort_values(schema.period, kind="stable").groupby(schema.unit, sort=False)
    for uid, grp in grouped:
        i = unit_index[uid]
        cov = grp[list(schema.covariates)].to_numpy(dtype=float)
        if cov.shape[0] > 1 and not (cov == cov[0]).all():
            raise PanelFormatError(
                f"unit {uid!r} has time-varying covariates (out of scope)"
            )
        covariates[i] = cov[0]
        raw_cohort = grp[schema.cohort].iloc[0]
        if grp[schema.cohort].nunique() > 1:
            raise PanelFormatError(f"unit {uid!r} has an inconsistent cohort column")
        if isinstance(raw_cohort, str) and raw_cohort.strip().lower() == "never":
            cohort[i] = NEVER_TREATED
        else:
            try:
                key = type(period_labels[0])(raw_cohort)
            except (TypeError, ValueError):
                key = raw_cohort
            if key not in period_index:
                raise PanelFormatError(
                    f"unit {uid!r} cohort {raw_cohort!r} is not a period label or 'never'"
                )
            cohort[i] = period_index[key]
            if cohort[i] == 0:
                raise PanelFormatError(f"unit {uid!r} is treated at period 0")
        if instrument is not None:
            zvals = pd.to_numeric(grp[schema.instrument], errors="coerce")
            if zvals.isna().any() or not zvals.isin((0, 1)).all():
                raise PanelFormatError(f"unit {uid!r} has a non-binary instrument flag")
            instrument[i] = int(zvals.iloc[0])

    if not np.all(np.isfinite(covariates)):
        raise PanelFormatError("covariates contain non-finite values")

    return PanelDataset(
        unit_ids=unit_ids,
        outcomes=outcomes,
        cohort=cohort,
        covariates=covariates,
        covariate_names=tuple(schema.covariates),
        instrument=instrument,
        treatment=treatment,
        period_labels=period_labels,
    )


def two_period(data: PanelDataset, pre: int, post: int, x_cols,
               transform: str = PARALLEL_TRENDS) -> TwoPeriodView:
    """Collapse a panel into (W, X, D, S) rows for one (pre, post) pair.

    Every unit must be never-treated or first treated exactly at ``post``;
    cohorts between, at or before ``pre``, or after ``post`` change the
    estimand and are an error rather than being silently dropped.
    """
    t = data.n_periods
    if not (0 <= pre < post < t):
        raise PanelFormatError(f"need 0 <= pre < post < T, got pre={pre} post={post} T={t}")
    if transform not in TRANSFORMS:
        raise PanelFormatError(f"unknown transform {transform!r}")

    cohort = data.cohort
    treated = cohort == post
    never = cohort == NEVER_TREATED
    bad = ~(treated | never)
    if bad.any():
        uid = data.unit_ids[int(np.nonzero(bad)[0][0])]
        raise PanelFormatError(
            f"unit {uid!r} has cohort {cohort[bad][0]}, which is neither 'never' nor "
            f"first-treated at post={post} (ambiguous group)"
        )

    x_cols = check_x_cols(x_cols, data.covariates.shape[1])
    d = treated.astype(np.int64)
    if transform == PARALLEL_TRENDS:
        s = data.outcomes[:, post] - data.outcomes[:, pre]
        w = data.covariates.copy()
        w_names = data.covariate_names
    else:
        s = data.outcomes[:, post].copy()
        w = np.column_stack([data.covariates, data.outcomes[:, pre]])
        w_names = data.covariate_names + ("lag_outcome",)

    return TwoPeriodView(
        w=w, x_cols=x_cols, d=d, s=s,
        source_unit=data.unit_ids, w_names=w_names, transform=transform,
    )


def event_study_expand(data: PanelDataset, x_cols, include_cohort: bool = False
                       ) -> TwoPeriodView:
    """Expand a staggered panel into per-(cohort, period) estimation rows.

    Each treated unit (cohort g) emits one row per post period t in [g, T-1]
    with S = Y_t - Y_0 and the distance rel_time = t - g appended to W (and the
    cohort g itself when ``include_cohort``). Each never-treated unit emits one
    control row per distinct (g, t) cell observed among treated units, so the
    final stage sees rel_time (and cohort) as ordinary covariates. Control rows
    are replicated unweighted across cells.
    """
    t_periods = data.n_periods
    if t_periods < 2:
        raise PanelFormatError("event-study expansion needs T >= 2")
    cohort = data.cohort
    never_idx = np.nonzero(cohort == NEVER_TREATED)[0]
    treated_idx = np.nonzero(cohort != NEVER_TREATED)[0]
    if never_idx.size == 0:
        raise PanelFormatError("no never-treated units: controls unavailable")
    if treated_idx.size == 0:
        raise PanelFormatError("no treated units")

    x_cols = check_x_cols(x_cols, data.covariates.shape[1])

    rows_w, rows_s, rows_d, rows_unit = [], [], [], []
    cells = []
    for i in treated_idx:
        g = int(cohort[i])
        for t in range(g, t_periods):
            cells.append((g, t))
            rows_w.append((i, t - g, g))
            rows_s.append(data.outcomes[i, t] - data.outcomes[i, 0])
            rows_d.append(1)
            rows_unit.append(data.unit_ids[i])
    cells = sorted(set(cells))
    for i in never_idx:
        for (g, t) in cells:
            rows_w.append((i, t - g, g))
            rows_s.append(data.outcomes[i, t] - data.outcomes[i, 0])
            rows_d.append(0)
            rows_unit.append(data.unit_ids[i])

    idx = np.array([r[0] for r in rows_w], dtype=np.int64)
    delta = np.array([r[1] for r in rows_w], dtype=float)
    gcol = np.array([r[2] for r in rows_w], dtype=float)
    aug = [delta[:, None]]
    names = data.covariate_names + ("rel_time",)
    if include_cohort:
        aug.append(gcol[:, None])
        names = names + ("cohort",)
    w = np.column_stack([data.covariates[idx]] + aug)

    d_orig = data.covariates.shape[1]
    x_aug = x_cols + (d_orig,)
    if include_cohort:
        x_aug = x_aug + (d_orig + 1,)

    return TwoPeriodView(
        w=w,
        x_cols=x_aug,
        d=np.array(rows_d, dtype=np.int64),
        s=np.array(rows_s, dtype=float),
        source_unit=tuple(rows_unit),
        w_names=names,
        transform=PARALLEL_TRENDS,
    )


def assign_folds(n: int, k: int, seed: int, d, strict: bool = True) -> FoldAssignment:
    """Stratified fold assignment: shuffle each group, deal round-robin.

    Deterministic in (n, k, seed, d). With ``strict`` (the default) each group
    must have at least k members so every fold contains both groups; per-fold
    group counts then differ by at most one.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= K <= n, got K={k}, n={n}")
    d = as_binary_vector(np.asarray(d), "d")
    if d.shape != (n,):
        raise ValueError("d must have length n")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    start = 0  # continue the deal across groups so total fold sizes balance
    for group in (1, 0):
        idx = np.nonzero(d == group)[0]
        if strict and 0 < idx.size < k:
            raise ValueError(
                f"group d={group} has {idx.size} rows < K={k}; "
                "cannot stratify every fold (pass strict=False to allow)"
            )
        perm = rng.permutation(idx.size)
        fold_of[idx[perm]] = (start + np.arange(idx.size)) % k
        start += idx.size
    return FoldAssignment(n=n, k=k, fold_of=fold_of, seed=seed)
