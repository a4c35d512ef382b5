"""Split conformal prediction that stays valid when test covariates are
altered by a specified family of strategic alteration functions.

Calibration replaces each conformity score with its supremum over the
alteration family, realized once per point from keyed random streams; the
resulting threshold keeps the usual distribution-free coverage guarantee
simultaneously for every alteration in the family, with group- and
label-conditional variants.
"""

from .alterations import (
    MahalanobisCost,
    RationalUtility,
    SearchConfig,
    build_iterative_family,
    build_simulator_family,
    build_utility_cost_family,
    misspecify,
    rational_utility,
    regularized_covariance,
)
from .calibrate import (
    CalibratedPredictor,
    calibrate_group_conditional,
    calibrate_label_conditional,
    calibrate_standard,
    calibrate_strategic,
    empirical_quantile,
    predict_set,
)
from .core import (
    AlterationFamily,
    ClassificationScorer,
    Example,
    FullSet,
    Interval,
    LabelSet,
    PredictionSet,
    RegressionScorer,
    SplitDataset,
    Task,
    identity_family,
    strategic_score,
    sup_scores,
)
from .metrics import (
    CoverageReport,
    avg_size_diff,
    bootstrap_ci,
    evaluate_predictors,
    gaussian_tv,
    robustness_gap_check,
    set_size,
    strategic_coverage,
    tightness_check,
    training_conditional_check,
)
from .models import (
    LogisticClassifier,
    LogisticConfig,
    RidgeRegressor,
    fit_logistic,
    fit_ridge,
    repeated_risk_minimization,
)

__version__ = "0.1.0"
