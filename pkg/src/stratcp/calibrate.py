"""Threshold calibration and prediction-set construction.

The marginal calibrator picks the smallest threshold t such that

    (#{i : S_i > t} + 1) / (n + 1) <= alpha

over the calibration sup-scores S_i = sup over the family of s(Delta(x_i),
y_i).  Group- and label-conditional variants run the same rule within each
group / true class and use the matching (or, for overlapping groups, the
largest matching) threshold at prediction time.  A threshold of +inf is the
honest answer when a slice is too small for its coverage level; the
resulting sets are the whole label space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    AlterationFamily,
    ClassificationScorer,
    ConformityScorer,
    FullSet,
    Interval,
    LabelSet,
    PredictionSet,
    calibration_stream,
    sup_scores,
)

__all__ = [
    "CalibratedPredictor",
    "GroupPredicate",
    "calibrate_group_conditional",
    "calibrate_label_conditional",
    "calibrate_standard",
    "calibrate_strategic",
    "empirical_quantile",
    "predict_set",
]

# Membership test for one covariate group, vectorized over rows.
GroupPredicate = Callable[[np.ndarray], np.ndarray]

# Guard against float noise when a quantile index lands on an integer.
_CEIL_TOL = 1e-9


def empirical_quantile(values: Sequence[float], beta: float) -> float:
    """Smallest t with at least a beta fraction of values <= t.

    Equals the ceil(beta * m)-th order statistic; +inf entries are allowed.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must be in (0, 1]")
    k = math.ceil(beta * v.size - _CEIL_TOL)
    return float(np.sort(v)[max(k, 1) - 1])


def calibrate_standard(scores: Sequence[float], alpha: float) -> float:
    """Smallest t with (#{s_i > t} + 1) / (n + 1) <= alpha, or +inf.

    The finite answer is the ceil((1 - alpha)(n + 1))-th order statistic;
    when that rank exceeds n (alpha below 1 / (n + 1)) no finite threshold
    works and +inf is returned.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty score sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    n = scores.size
    rank = math.ceil((1.0 - alpha) * (n + 1) - _CEIL_TOL)
    if rank > n:
        return math.inf
    return empirical_quantile(scores, rank / n)


@dataclass(frozen=True, eq=False)
class CalibratedPredictor:
    """A conformity scorer plus calibrated threshold(s).

    ``mode`` selects how the effective threshold for a point is found:
    ``marginal`` uses one global value, ``group`` the largest threshold among
    the groups containing the point, and ``label`` a per-class table applied
    classwise during set construction.
    """

    scorer: ConformityScorer
    alpha: float
    family: AlterationFamily
    n_calib: int
    mode: str
    threshold: float = math.inf
    groups: tuple[GroupPredicate, ...] = ()
    group_thresholds: Optional[np.ndarray] = None
    label_thresholds: Optional[np.ndarray] = None

    def effective_thresholds(self, x2d: np.ndarray) -> np.ndarray:
        """Per-point threshold for marginal or group mode."""
        x2d = np.atleast_2d(np.asarray(x2d, dtype=float))
        if self.mode == "marginal":
            return np.full(x2d.shape[0], self.threshold)
        if self.mode == "group":
            masks = np.stack([np.asarray(g(x2d), dtype=bool) for g in self.groups])
            if not masks.any(axis=0).all():
                raise ValueError("a point belongs to no group")
            stacked = np.where(masks, self.group_thresholds[:, None], -math.inf)
            return stacked.max(axis=0)
        raise ValueError("label-conditional predictors have per-class thresholds")


def calibrate_strategic(
    x_calib: np.ndarray,
    y_calib: np.ndarray,
    scorer: ConformityScorer,
    family: AlterationFamily,
    alpha: float,
    seed,
) -> CalibratedPredictor:
    """Marginal strategic calibration on sup-scores."""
    scores = sup_scores(scorer, family, x_calib, y_calib, calibration_stream(seed))
    return CalibratedPredictor(
        scorer=scorer,
        alpha=float(alpha),
        family=family,
        n_calib=scores.size,
        mode="marginal",
        threshold=calibrate_standard(scores, alpha),
    )


def calibrate_group_conditional(
    x_calib: np.ndarray,
    y_calib: np.ndarray,
    scorer: ConformityScorer,
    family: AlterationFamily,
    alpha: float,
    groups: Sequence[GroupPredicate],
    seed,
) -> CalibratedPredictor:
    """Strategic calibration run separately within each covariate group.

    Groups may overlap but must cover every calibration point; a group too
    small to support the level gets a +inf threshold.
    """
    if not groups:
        raise ValueError("no groups given")
    x_calib = np.atleast_2d(np.asarray(x_calib, dtype=float))
    masks = [np.asarray(g(x_calib), dtype=bool) for g in groups]
    if not np.any(masks, axis=0).all():
        uncovered = int(np.flatnonzero(~np.any(masks, axis=0))[0])
        raise ValueError(f"calibration point {uncovered} belongs to no group")
    scores = sup_scores(scorer, family, x_calib, y_calib, calibration_stream(seed))
    thresholds = np.array(
        [
            calibrate_standard(scores[mask], alpha) if mask.any() else math.inf
            for mask in masks
        ]
    )
    return CalibratedPredictor(
        scorer=scorer,
        alpha=float(alpha),
        family=family,
        n_calib=scores.size,
        mode="group",
        groups=tuple(groups),
        group_thresholds=thresholds,
    )


def calibrate_label_conditional(
    x_calib: np.ndarray,
    y_calib: np.ndarray,
    scorer: ClassificationScorer,
    family: AlterationFamily,
    alpha: float,
    seed,
) -> CalibratedPredictor:
    """Strategic calibration run separately for each true class.

    Classes absent from the calibration split get a +inf threshold and are
    therefore included in every predicted set.
    """
    if not isinstance(scorer, ClassificationScorer):
        raise ValueError("label-conditional calibration needs a classification scorer")
    y_calib = np.asarray(y_calib, dtype=int)
    scores = sup_scores(scorer, family, x_calib, y_calib, calibration_stream(seed))
    thresholds = np.array(
        [
            calibrate_standard(scores[y_calib == label], alpha)
            if (y_calib == label).any()
            else math.inf
            for label in range(scorer.n_classes)
        ]
    )
    return CalibratedPredictor(
        scorer=scorer,
        alpha=float(alpha),
        family=family,
        n_calib=scores.size,
        mode="label",
        label_thresholds=thresholds,
    )


def predict_set(pred: CalibratedPredictor, x: np.ndarray) -> PredictionSet:
    """Labels whose conformity score at x stays within the threshold(s)."""
    x = np.asarray(x, dtype=float)
    if isinstance(pred.scorer, ClassificationScorer):
        class_scores = 1.0 - pred.scorer.probabilities(x[None, :])[0]
        if pred.mode == "label":
            thresholds = pred.label_thresholds
        else:
            thresholds = pred.effective_thresholds(x[None, :])[0]
        members = np.flatnonzero(class_scores <= thresholds)
        return LabelSet(members=frozenset(int(m) for m in members))
    t = pred.effective_thresholds(x[None, :])[0]
    if math.isinf(t):
        return FullSet()
    mu = float(pred.scorer.predict(x[None, :])[0])
    return Interval(lo=mu - t, hi=mu + t)
