"""Doubly robust heterogeneous effects on the treated from panel data."""

from .catt import (
    PseudoOutcome,
    att,
    dr_loss,
    fit_cate_dr,
    fit_cate_or,
    fit_dr_catt,
    fit_or_catt,
    predict,
    pseudo_outcome,
)
from .covshift import (
    RieszSpec,
    ShiftView,
    covshift_pseudo_outcome,
    cross_fit_shift,
    fit_covshift_functional,
    moment_values,
)
from .crossfit import NuisanceEstimates, cross_fit, cross_fit_arm
from .dgp import (
    DgpConfig,
    IvDgpConfig,
    SemiSynthConfig,
    SimulatedPanel,
    default_min_wage_recipe,
    semisynthetic,
    simulate,
    simulate_iv,
    true_catt,
)
from .evaluation import (
    BenchmarkConfig,
    BenchmarkResult,
    CalibrationReport,
    calibrate,
    mse_treated,
    run_benchmark,
)
from .exceptions import (
    ConvergenceError,
    CrossFitError,
    HetDidError,
    NonConvexSystemError,
    PanelFormatError,
    SingularSystemError,
    SpecValidationError,
    WeakInstrumentError,
)
from .ivdid import IvNuisance, IvView, cross_fit_iv, fit_dr_clate, iv_pseudo, latt
from .learners import LearnerSpec, fit_propensity, fit_regression
from .panel import (
    NEVER_TREATED,
    FoldAssignment,
    PanelDataset,
    PanelSchema,
    TwoPeriodView,
    assign_folds,
    event_study_expand,
    load_panel_csv,
    two_period,
)
from .serialize import load_model, save_model

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
