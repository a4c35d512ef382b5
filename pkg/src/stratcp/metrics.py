"""Coverage and size estimators, bootstrap intervals, and analytic oracles
for the robustness / tightness / training-conditional property checks.

Coverage "for every member simultaneously" is evaluated as the per-point
sup-score compared against the point's effective threshold, which is
equivalent to intersecting the per-member membership tests and much cheaper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calibrate import CalibratedPredictor, calibrate_strategic
from .core import (
    AlterationFamily,
    ClassificationScorer,
    FullSet,
    Interval,
    LabelSet,
    as_seed_sequence,
    evaluation_stream,
    identity_family,
    substream,
    sup_scores,
)

__all__ = [
    "CoverageReport",
    "RobustnessReport",
    "TightnessReport",
    "TrainingConditionalReport",
    "avg_size_diff",
    "bootstrap_ci",
    "coverage_indicators",
    "evaluate_predictors",
    "gaussian_tv",
    "robustness_gap_check",
    "set_size",
    "set_sizes",
    "strategic_coverage",
    "tightness_check",
    "training_conditional_check",
]


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


def coverage_indicators(
    pred: CalibratedPredictor,
    x_test: np.ndarray,
    y_test: np.ndarray,
    family: Optional[AlterationFamily] = None,
    seed=0,
) -> np.ndarray:
    """Per-point indicator that the true label survives every alteration.

    ``family`` defaults to the one used for calibration; passing a different
    one evaluates the predictor under alterations it was not calibrated for.
    Point i realizes the family from substream (seed, evaluation, i).
    """
    family = pred.family if family is None else family
    x_test = np.atleast_2d(np.asarray(x_test, dtype=float))
    scores = sup_scores(pred.scorer, family, x_test, y_test, evaluation_stream(seed))
    if pred.mode == "label":
        thresholds = pred.label_thresholds[np.asarray(y_test, dtype=int)]
    else:
        thresholds = pred.effective_thresholds(x_test)
    return scores <= thresholds


def strategic_coverage(
    pred: CalibratedPredictor,
    x_test: np.ndarray,
    y_test: np.ndarray,
    family: Optional[AlterationFamily] = None,
    seed=0,
) -> float:
    """Fraction of test points covered simultaneously for all members."""
    if len(np.atleast_2d(x_test)) == 0:
        raise ValueError("empty test set")
    return float(coverage_indicators(pred, x_test, y_test, family, seed).mean())


# ---------------------------------------------------------------------------
# Set sizes
# ---------------------------------------------------------------------------


def set_size(pset, label_range: Optional[tuple[float, float]] = None) -> float:
    """Interval length, member count, or the observed label range for a full set."""
    if isinstance(pset, Interval):
        return pset.length
    if isinstance(pset, LabelSet):
        return float(pset.size)
    if isinstance(pset, FullSet):
        if label_range is None:
            raise ValueError("full-set size needs the observed label range")
        return label_range[1] - label_range[0]
    raise TypeError(f"not a prediction set: {pset!r}")


def set_sizes(
    pred: CalibratedPredictor,
    x_test: np.ndarray,
    label_range: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    """Sizes of the predicted sets at the given (unaltered) points."""
    x_test = np.atleast_2d(np.asarray(x_test, dtype=float))
    if isinstance(pred.scorer, ClassificationScorer):
        class_scores = 1.0 - pred.scorer.probabilities(x_test)
        if pred.mode == "label":
            thresholds = pred.label_thresholds[None, :]
        else:
            thresholds = pred.effective_thresholds(x_test)[:, None]
        return (class_scores <= thresholds).sum(axis=1).astype(float)
    thresholds = pred.effective_thresholds(x_test)
    sizes = 2.0 * thresholds
    if np.isinf(sizes).any():
        if label_range is None:
            raise ValueError("full-set size needs the observed label range")
        sizes = np.where(np.isinf(sizes), label_range[1] - label_range[0], sizes)
    return sizes


def avg_size_diff(
    pred_a: CalibratedPredictor,
    pred_b: CalibratedPredictor,
    x_test: np.ndarray,
    label_range: Optional[tuple[float, float]] = None,
) -> float:
    """Mean size difference (a minus b) at the unaltered test points."""
    return float(
        np.mean(set_sizes(pred_a, x_test, label_range) - set_sizes(pred_b, x_test, label_range))
    )


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def bootstrap_ci(
    values: Sequence[float], b: int = 1000, level: float = 0.95, seed=0
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if b < 100:
        raise ValueError("need at least 100 resamples")
    rng = np.random.default_rng(as_seed_sequence(seed))
    idx = rng.integers(values.size, size=(b, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Gaussian total-variation oracle
# ---------------------------------------------------------------------------


def _erf(z: float) -> float:
    """erf via the positive-term series (2z/sqrt(pi)) e^{-z^2} sum_k (2z^2)^k / (2k+1)!!.

    No alternating terms, so no cancellation; absolute error well under 1e-12
    on the range where the result is representably below 1.
    """
    if z < 0:
        return -_erf(-z)
    if z >= 6.0:
        # 1 - erf(6) ~ 2e-17 is below float64 resolution next to 1.
        return float(np.nextafter(1.0, 0.0))
    term = 1.0
    total = 1.0
    k = 0
    zz2 = 2.0 * z * z
    while term > 1e-18 * total:
        k += 1
        term *= zz2 / (2 * k + 1)
        total += term
    return min(
        2.0 * z / math.sqrt(math.pi) * math.exp(-z * z) * total,
        float(np.nextafter(1.0, 0.0)),
    )


def gaussian_tv(distance: float) -> float:
    """Total variation between equal-covariance Gaussians whose means differ
    by Mahalanobis distance ``distance``: 2 Phi(distance / 2) - 1."""
    if distance < 0:
        raise ValueError("distance must be >= 0")
    return _erf(distance / (2.0 * math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# Property-check procedures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobustnessReport:
    coverage: float
    bound: float
    tv_bound: float
    alpha: float
    n_test: int
    violated: bool


def robustness_gap_check(
    pred: CalibratedPredictor,
    x_test: np.ndarray,
    y_test: np.ndarray,
    true_family: AlterationFamily,
    tv_bound: float,
    seed=0,
) -> RobustnessReport:
    """Coverage under the true alterations versus the misspecification bound
    1 - alpha - TV, flagged when the shortfall exceeds 3 binomial SEs."""
    cov = strategic_coverage(pred, x_test, y_test, true_family, seed)
    bound = 1.0 - pred.alpha - tv_bound
    n = np.atleast_2d(x_test).shape[0]
    se = math.sqrt(max(cov * (1.0 - cov), 1e-12) / n)
    return RobustnessReport(
        coverage=cov,
        bound=bound,
        tv_bound=tv_bound,
        alpha=pred.alpha,
        n_test=n,
        violated=cov < bound - 3.0 * se,
    )


@dataclass(frozen=True)
class TightnessReport:
    mean_length: float
    limit: float
    ok: bool


def tightness_check(
    pred: CalibratedPredictor,
    x_test: np.ndarray,
    m_bound: float,
    label_range: Optional[tuple[float, float]] = None,
    slack: float = 0.0,
) -> TightnessReport:
    """Mean strategic interval length against the 2M limit for a model whose
    predictions sit within M of the truth."""
    mean_length = float(np.mean(set_sizes(pred, x_test, label_range)))
    limit = 2.0 * m_bound + slack
    return TightnessReport(mean_length=mean_length, limit=limit, ok=mean_length <= limit)


@dataclass(frozen=True)
class TrainingConditionalReport:
    pass_fraction: float
    required_fraction: float
    coverage_floor: float
    coverages: np.ndarray = field(repr=False)
    ok: bool = True


def training_conditional_check(
    sample_fn: Callable[[int, np.random.SeedSequence], tuple[np.ndarray, np.ndarray]],
    scorer,
    family: AlterationFamily,
    alpha: float,
    delta: float,
    repetitions: int,
    n_calib: int,
    n_test: int,
    seed=0,
) -> TrainingConditionalReport:
    """PAC check: across repeated calibration draws, the fraction whose
    fresh-test coverage clears 1 - alpha - sqrt(log(1/delta) / 2n) must be at
    least 1 - delta, up to 3 binomial SEs of the repetition count.

    ``sample_fn(n, seq)`` draws n fresh (covariates, labels) rows.
    """
    if repetitions < 1:
        raise ValueError("need at least 1 repetition")
    root = as_seed_sequence(seed)
    floor = 1.0 - alpha - math.sqrt(math.log(1.0 / delta) / (2.0 * n_calib))
    coverages = np.empty(repetitions)
    for r in range(repetitions):
        rep = substream(root, r)
        x_cal, y_cal = sample_fn(n_calib, substream(rep, 0))
        x_te, y_te = sample_fn(n_test, substream(rep, 1))
        pred = calibrate_strategic(x_cal, y_cal, scorer, family, alpha, substream(rep, 2))
        coverages[r] = strategic_coverage(pred, x_te, y_te, seed=substream(rep, 3))
    pass_fraction = float(np.mean(coverages >= floor))
    required = 1.0 - delta - 3.0 * math.sqrt(delta * (1.0 - delta) / repetitions)
    return TrainingConditionalReport(
        pass_fraction=pass_fraction,
        required_fraction=required,
        coverage_floor=floor,
        coverages=coverages,
        ok=pass_fraction >= required,
    )


# ---------------------------------------------------------------------------
# Combined report
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoverageReport:
    """Coverage and size statistics for one calibrated predictor, with 95%
    bootstrap intervals, compared against a reference predictor for sizes."""

    alpha: float
    n_test: int
    strategic_coverage: float
    plain_coverage: float
    avg_set_size: float
    avg_size_diff: float
    ci95: dict

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_test": self.n_test,
            "strategic_coverage": self.strategic_coverage,
            "plain_coverage": self.plain_coverage,
            "avg_set_size": self.avg_set_size,
            "avg_size_diff": self.avg_size_diff,
            "ci95": {k: list(v) for k, v in self.ci95.items()},
        }


def evaluate_predictors(
    pred: CalibratedPredictor,
    reference: CalibratedPredictor,
    x_test: np.ndarray,
    y_test: np.ndarray,
    family: Optional[AlterationFamily] = None,
    seed=0,
    bootstrap_b: int = 1000,
    label_range: Optional[tuple[float, float]] = None,
) -> CoverageReport:
    """Assemble the standard report for ``pred``; sizes are measured at the
    unaltered test covariates and differenced against ``reference``."""
    root = as_seed_sequence(seed)
    covered = coverage_indicators(pred, x_test, y_test, family, root).astype(float)
    plain = coverage_indicators(pred, x_test, y_test, identity_family(), root)
    sizes = set_sizes(pred, x_test, label_range)
    diffs = sizes - set_sizes(reference, x_test, label_range)
    boot = substream(root, 10)
    ci = {
        "strategic_coverage": bootstrap_ci(covered, bootstrap_b, seed=substream(boot, 0)),
        "plain_coverage": bootstrap_ci(plain.astype(float), bootstrap_b, seed=substream(boot, 1)),
        "avg_set_size": bootstrap_ci(sizes, bootstrap_b, seed=substream(boot, 2)),
        "avg_size_diff": bootstrap_ci(diffs, bootstrap_b, seed=substream(boot, 3)),
    }
    return CoverageReport(
        alpha=pred.alpha,
        n_test=np.atleast_2d(x_test).shape[0],
        strategic_coverage=float(covered.mean()),
        plain_coverage=float(plain.mean()),
        avg_set_size=float(sizes.mean()),
        avg_size_diff=float(diffs.mean()),
        ci95=ci,
    )
