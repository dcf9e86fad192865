"""Reference data-generating processes with oracle effects and nuisances.

The main generator draws covariates W ~ N(mu_W, I) and confounders
U ~ N(mu_U, I); the treatment probability is the clipped logistic
``p = expit(0.5 * beta_D'(W - mu_W) * (alpha_U'(U - mu_U))^2)`` and the effect
on the treated is ``theta(W) = 0.5 * W_1 * 1{W_2 > 0}`` (times an optional
scale; zero gives a null-effect world). The confounder term enters both
periods' outcomes identically, so it cancels from the trend: the trend
regression has the closed form used as the oracle nuisance.

Coefficient vectors are drawn once per config from a dedicated seed stream and
frozen, so the effect function and nuisances are fixed functions of W for a
given config while fresh panels come from the data stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .exceptions import SpecValidationError
from .ivdid import IvView
from .panel import NEVER_TREATED, PanelDataset
from .validation import as_float_matrix, readonly

VARIANTS = ("cpt", "violated", "imbalanced", "high_dim")

_COEF_STREAM = 0x0EF5
_DATA_STREAM = 0xDA7A


@dataclass(frozen=True)
class DgpConfig:
    """Generator settings; coefficients are frozen functions of ``seed``.

    ``d_w`` defaults to 20 (100 for the high_dim variant). ``effect_scale``
    multiplies the effect function (0 disables it). Optional ``beta_d`` /
    ``alpha_u`` / ``beta_y`` / ``gamma`` overrides pin specific coefficient
    vectors instead of drawing them. ``draw`` indexes independent panels under
    the same frozen coefficients (train/test pairs).
    """

    n: int = 5000
    variant: str = "cpt"
    seed: int = 0
    draw: int = 0
    d_w: int | None = None
    d_u: int = 5
    clip: tuple[float, float] = (0.1, 0.9)
    imbalance_factor: float = 0.1
    effect_scale: float = 1.0
    noise_sd: float = 0.5
    beta_d: tuple[float, ...] | None = None
    alpha_u: tuple[float, ...] | None = None
    beta_y: tuple[float, ...] | None = None
    gamma: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecValidationError(f"unknown variant {self.variant!r}")
        if self.n < 1:
            raise SpecValidationError("n must be positive")
        if self.d_u < 1:
            raise SpecValidationError("d_u must be positive")
        lo, hi = self.clip
        if not 0.0 < lo < hi < 1.0:
            raise SpecValidationError("clip bounds must satisfy 0 < lo < hi < 1")
        if self.dim_w < 6:
            raise SpecValidationError("d_w must be >= 6 (the outcome uses W_6)")

    @property
    def dim_w(self) -> int:
        if self.d_w is not None:
            return self.d_w
        return 100 if self.variant == "high_dim" else 20


@dataclass(frozen=True)
class DgpCoefficients:
    mu_w: np.ndarray
    mu_u: np.ndarray
    beta_d: np.ndarray
    alpha_u: np.ndarray
    beta_y: np.ndarray
    gamma: np.ndarray
    mask: np.ndarray  # multiplies W to form W_masked; drawn once per config


def draw_coefficients(config: DgpConfig) -> DgpCoefficients:
    """Frozen per-config coefficient draw (means U[0,1], slopes U[-1,1])."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _COEF_STREAM]))
    d_w, d_u = config.dim_w, config.d_u
    mu_w = rng.uniform(0.0, 1.0, d_w)
    mu_u = rng.uniform(0.0, 1.0, d_u)
    beta_d = rng.uniform(-1.0, 1.0, d_w)
    alpha_u = rng.uniform(-1.0, 1.0, d_u)
    beta_y = rng.uniform(-1.0, 1.0, d_w)
    gamma = rng.uniform(-1.0, 1.0, d_w)
    masked_out = rng.choice(d_w, size=d_w // 2, replace=False)
    mask = np.ones(d_w)
    mask[masked_out] = 0.0
    for name in ("beta_d", "alpha_u", "beta_y", "gamma"):
        override = getattr(config, name)
        if override is not None:
            arr = np.asarray(override, dtype=float)
            expected = d_u if name == "alpha_u" else d_w
            if arr.shape != (expected,):
                raise SpecValidationError(f"{name} override must have length {expected}")
            if name == "beta_d":
                beta_d = arr
            elif name == "alpha_u":
                alpha_u = arr
            elif name == "beta_y":
                beta_y = arr
            else:
                gamma = arr
    return DgpCoefficients(mu_w=mu_w, mu_u=mu_u, beta_d=beta_d, alpha_u=alpha_u,
                           beta_y=beta_y, gamma=gamma, mask=mask)


@dataclass(frozen=True)
class SimulatedPanel:
    """A two-period panel plus generator-side oracles.

    ``propensity`` is the realized clipped treatment probability (it conditions
    on the confounder draw as well as W; the orthogonal moment holds for it
    row-wise). ``g0`` is the closed-form trend regression where one exists
    (None for the violated variant, whose trend depends on the lagged outcome).
    """

    panel: PanelDataset
    theta: np.ndarray
    propensity: np.ndarray
    g0: np.ndarray | None
    y1_treated: np.ndarray
    y1_control: np.ndarray
    config: object  # DgpConfig or SemiSynthConfig

    def __post_init__(self):
        for arr in (self.theta, self.propensity, self.y1_treated, self.y1_control):
            readonly(arr)
        if self.g0 is not None:
            readonly(self.g0)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.panel.covariate_names


def true_catt(config: DgpConfig, w_rows) -> np.ndarray:
    """Closed-form effect function 0.5 * W_1 * 1{W_2 > 0} (times effect_scale)."""
    w = as_float_matrix(w_rows, "w_rows")
    if w.shape[1] != config.dim_w:
        raise ValueError(f"expected {config.dim_w} covariate columns, got {w.shape[1]}")
    return config.effect_scale * 0.5 * w[:, 0] * (w[:, 1] > 0)


def simulate(config: DgpConfig) -> SimulatedPanel:
    """Draw one panel; bit-identical across calls with the same config."""
    coefs = draw_coefficients(config)
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, _DATA_STREAM, config.draw]))
    n, d_w = config.n, config.dim_w
    w = coefs.mu_w + rng.standard_normal((n, d_w))
    u = coefs.mu_u + rng.standard_normal((n, config.d_u))
    conf_score = (u - coefs.mu_u) @ coefs.alpha_u
    prop_score = (w - coefs.mu_w) @ coefs.beta_d
    p = expit(0.5 * prop_score * conf_score**2)
    lo, hi = config.clip
    p = np.clip(p, lo, hi)
    if config.variant == "imbalanced":
        p = p * config.imbalance_factor
    d = rng.binomial(1, p)
    theta = true_catt(config, w)
    eps0 = rng.normal(0.0, config.noise_sd, n)
    eps1 = rng.normal(0.0, config.noise_sd, n)

    if config.variant == "violated":
        confound = conf_score**2 * w[:, 5]
        y0 = confound + w[:, 1] + eps0
        m = np.abs(y0)
        trend = m * ((w * w) @ coefs.gamma) + (w[:, 0] > 0) * w[:, 1]
        y1_control = confound + trend + eps1
        g0 = None
    else:
        confound = 5.0 * conf_score**2 * w[:, 5]
        y0 = confound + w[:, 1] + eps0
        w_masked = w * coefs.mask
        lift = (w[:, 0] > 0) * w[:, 0] + w_masked @ coefs.beta_y + w[:, 2]
        y1_control = confound + lift + eps1
        g0 = lift - w[:, 1]  # E[Y1 - Y0 | D=0, W]: confounder and noise drop out
    y1_treated = y1_control + theta
    y1 = np.where(d == 1, y1_treated, y1_control)

    names = tuple(f"w{j + 1}" for j in range(d_w))
    panel = PanelDataset(
        unit_ids=tuple(range(n)),
        outcomes=np.column_stack([y0, y1]),
        cohort=np.where(d == 1, 1, NEVER_TREATED).astype(np.int64),
        covariates=w,
        covariate_names=names,
    )
    return SimulatedPanel(panel=panel, theta=theta, propensity=p, g0=g0,
                          y1_treated=y1_treated, y1_control=y1_control,
                          config=config)


# ---------------------------------------------------------------------------
# Instrumented generator (two-sided noncompliance, known local effect)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IvDgpConfig:
    """Instrumented design: exposure Z ~ clipped logistic in W; compliance
    types are drawn independently of (W, Z), so the local effect among
    compliers equals the effect function itself.

    ``effect`` is ("constant", v) or ("linear", v) for v * W_1.
    """

    n: int = 5000
    d_w: int = 5
    seed: int = 0
    draw: int = 0
    complier_rate: float = 0.6
    always_rate: float = 0.2
    clip: tuple[float, float] = (0.1, 0.9)
    effect: tuple[str, float] = ("constant", 1.0)
    noise_sd: float = 0.5

    def __post_init__(self):
        # Degenerate shares 0 and 1 are allowed (they exercise the sharp-design
        # reduction and the weak-instrument paths); anything outside [0, 1] is
        # a config error.
        if not 0.0 <= self.complier_rate <= 1.0:
            raise SpecValidationError("complier rate must lie in [0, 1]")
        if self.always_rate < 0 or self.complier_rate + self.always_rate > 1.0:
            raise SpecValidationError("type shares must be a sub-probability split")
        if self.d_w < 3:
            raise SpecValidationError("d_w must be >= 3 (the trend uses W_3)")
        if self.effect[0] not in ("constant", "linear"):
            raise SpecValidationError("effect must be ('constant', v) or ('linear', v)")


@dataclass(frozen=True)
class IvSimulation:
    view: IvView
    clate: np.ndarray           # effect function per row (complier effect)
    g_y: np.ndarray             # oracle E[dY | Z=0, W]
    g_d: np.ndarray             # oracle E[dD | Z=0, W]
    pi: np.ndarray              # oracle clipped P(Z=1 | W)
    config: IvDgpConfig


def _iv_effect(config: IvDgpConfig, w: np.ndarray) -> np.ndarray:
    kind, v = config.effect
    if kind == "constant":
        return np.full(w.shape[0], float(v))
    return float(v) * w[:, 0]


def simulate_iv(config: IvDgpConfig) -> IvSimulation:
    """Two-sided noncompliance with monotone exposure response by construction.

    Never-takers have D = 0 under both exposure states, always-takers D = 1
    under both (including the pre period, where exposure has not happened and
    everyone holds their Z=0 treatment), compliers switch with Z.
    """
    coef_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _COEF_STREAM]))
    mu_w = coef_rng.uniform(0.0, 1.0, config.d_w)
    beta_z = coef_rng.uniform(-1.0, 1.0, config.d_w)
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, _DATA_STREAM, config.draw]))
    n = config.n
    w = mu_w + rng.standard_normal((n, config.d_w))
    lo, hi = config.clip
    pi = np.clip(expit((w - mu_w) @ beta_z), lo, hi)
    z = rng.binomial(1, pi)
    type_draw = rng.uniform(0.0, 1.0, n)
    complier = type_draw < config.complier_rate
    always = (type_draw >= config.complier_rate) & (
        type_draw < config.complier_rate + config.always_rate
    )
    # Adoption: d0 is the Z=0 state (always-takers only); post-period adoption
    # responds to exposure for compliers.
    d0 = always.astype(np.int64)
    d1 = (always | (complier & (z == 1))).astype(np.int64)
    dd = (d1 - d0).astype(float)

    tau = _iv_effect(config, w)
    trend = (w[:, 0] > 0) * w[:, 0] + w[:, 2] - w[:, 1]
    eps0 = rng.normal(0.0, config.noise_sd, n)
    eps1 = rng.normal(0.0, config.noise_sd, n)
    y0 = w[:, 1] + tau * d0 + eps0
    y1 = w[:, 1] + trend + tau * d1 + eps1
    dy = y1 - y0

    g_d = np.zeros(n)  # E[dD | Z=0, W]: types are exposure-independent
    g_y = trend.copy()  # always-takers hold d across periods, so tau cancels

    view = IvView(
        w=w,
        x_cols=tuple(range(min(2, config.d_w))),
        z=z,
        dy=dy,
        dd=dd,
        w_y=None,
        w_d=None,
    )
    return IvSimulation(view=view, clate=tau, g_y=g_y, g_d=g_d, pi=pi,
                        config=config)


# ---------------------------------------------------------------------------
# Semi-synthetic bootstrap recipe over a user-supplied CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One product term coef * prod(column ** power)."""

    coef: float
    powers: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class Formula:
    terms: tuple[Term, ...]

    def columns(self) -> tuple[str, ...]:
        cols = []
        for t in self.terms:
            for c, _ in t.powers:
                if c not in cols:
                    cols.append(c)
        return tuple(cols)

    def evaluate(self, df: pd.DataFrame) -> np.ndarray:
        out = np.zeros(len(df))
        for t in self.terms:
            val = np.full(len(df), t.coef)
            for col, power in t.powers:
                if col not in df.columns:
                    raise SpecValidationError(f"formula references missing column {col!r}")
                base = df[col].to_numpy(dtype=float)
                val = val * (base if power == 1 else np.power(base, power))
            out += val
        if not np.all(np.isfinite(out)):
            raise SpecValidationError(
                "formula produced non-finite values (fractional power of a "
                "negative column?)"
            )
        return out

    def to_dict(self) -> dict:
        return {"terms": [{"coef": t.coef, "powers": [list(p) for p in t.powers]}
                          for t in self.terms]}

    @classmethod
    def from_dict(cls, d) -> "Formula":
        return cls(terms=tuple(
            Term(coef=float(t["coef"]),
                 powers=tuple((str(c), float(p)) for c, p in t.get("powers", [])))
            for t in d["terms"]
        ))


@dataclass(frozen=True)
class SemiSynthConfig:
    """Bootstrap recipe: resample rows, assign treatment by a logistic score,
    and roll the pre outcome forward by trend + D * effect."""

    outcome_pre: str
    covariates: tuple[str, ...]
    score: Formula
    trend: Formula
    effect: Formula
    n: int = 10000
    noise_sd: float = 0.0


def default_min_wage_recipe(n: int = 10000) -> SemiSynthConfig:
    """The stock recipe over region dummies, log pay and log population columns."""
    score = Formula(terms=(
        Term(2.0, (("region_3", 1.0),)),
        Term(-2.0, (("region_4", 1.0),)),
        Term(1.0, (("log_avg_pay", 1.0),)),
        Term(-10.0),
    ))
    trend = Formula(terms=(
        Term(0.1, (("log_avg_pay", 1.0),)),
        Term(0.1, (("region_3", 1.0),)),
        Term(0.1, (("years_after", 1.0),)),
        Term(1.0, (("region_4", 1.0), ("years_after", 2.0))),
        Term(1.0, (("log_avg_pay", 0.5), ("log_avg_pop", 1.0))),
    ))
    effect = Formula(terms=(
        Term(0.1, (("log_avg_pop", 1.0),)),
        Term(0.1, (("log_avg_pop", 0.5),)),
    ))
    covariates = ("region_3", "region_4", "log_avg_pay", "log_avg_pop", "years_after")
    return SemiSynthConfig(outcome_pre="log_emp_pre", covariates=covariates,
                           score=score, trend=trend, effect=effect, n=n)


def semisynthetic(base, recipe: SemiSynthConfig, seed: int) -> SimulatedPanel:
    """Bootstrap a two-period panel from ``base`` (path or DataFrame).

    Treatment probability is logistic(score); the post outcome is
    pre + trend + D * effect (+ optional noise), with the effect stored as the
    oracle. Zero trend and zero effect reproduce the pre outcome exactly.
    """
    df = pd.read_csv(base) if not isinstance(base, pd.DataFrame) else base
    needed = set(recipe.covariates) | {recipe.outcome_pre}
    for f in (recipe.score, recipe.trend, recipe.effect):
        needed |= set(f.columns())
    missing = sorted(c for c in needed if c not in df.columns)
    if missing:
        raise SpecValidationError(f"base data lacks recipe column(s): {missing}")

    rng = np.random.default_rng(np.random.SeedSequence([seed, _DATA_STREAM]))
    rows = rng.integers(0, len(df), size=recipe.n)
    boot = df.iloc[rows].reset_index(drop=True)
    p = expit(recipe.score.evaluate(boot))
    d = rng.binomial(1, p)
    trend = recipe.trend.evaluate(boot)
    effect = recipe.effect.evaluate(boot)
    y_pre = boot[recipe.outcome_pre].to_numpy(dtype=float)
    noise = rng.normal(0.0, recipe.noise_sd, recipe.n) if recipe.noise_sd > 0 else 0.0
    y_post_control = y_pre + trend + noise
    y_post_treated = y_post_control + effect
    y_post = np.where(d == 1, y_post_treated, y_post_control)

    panel = PanelDataset(
        unit_ids=tuple(range(recipe.n)),
        outcomes=np.column_stack([y_pre, y_post]),
        cohort=np.where(d == 1, 1, NEVER_TREATED).astype(np.int64),
        covariates=boot[list(recipe.covariates)].to_numpy(dtype=float),
        covariate_names=tuple(recipe.covariates),
    )
    return SimulatedPanel(panel=panel, theta=effect, propensity=p, g0=trend,
                          y1_treated=y_post_treated, y1_control=y_post_control,
                          config=recipe)
