"""Shared domain types: datasets, conformity scorers, alteration families.

Randomness discipline
---------------------
Everything stochastic is driven by ``numpy.random.SeedSequence`` streams that
are derived *functionally* from a root seed with integer keys, never by
advancing shared generator state.  The key layout is:

    (root seed) -> namespace -> point index -> member index

where the namespace separates calibration scoring, test evaluation, model
training, and data splitting so that no two phases ever consume the same
underlying variates.  Each alteration-family member is realized exactly once
per point from its own keyed substream, which makes every quantity in the
library reproducible bitwise from a single integer seed and safe to evaluate
in parallel across points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "Alteration",
    "AlterationFamily",
    "ClassificationScorer",
    "ConformityScorer",
    "Example",
    "FullSet",
    "Interval",
    "LabelSet",
    "PredictionSet",
    "PROB_FLOOR",
    "RegressionScorer",
    "SplitDataset",
    "Task",
    "as_seed_sequence",
    "calibration_stream",
    "data_stream",
    "evaluation_stream",
    "identity_family",
    "prefix_sup_scores",
    "rng_from",
    "strategic_score",
    "substream",
    "sup_scores",
    "training_stream",
]

# A single alteration: maps one covariate vector to an altered one, drawing
# any randomness it needs from the generator it is handed.
Alteration = Callable[[np.ndarray, np.random.Generator], np.ndarray]

# Classification probabilities are clamped into [PROB_FLOOR, 1 - PROB_FLOOR]
# before scoring so scores stay inside (0, 1) and utilities remain finite.
PROB_FLOOR = 1e-6

# Stream namespaces (first key under the root seed).
CALIBRATION_NS = 0
EVALUATION_NS = 1
TRAINING_NS = 2
DATA_NS = 3

# Sub-namespaces inside a single point's stream.
_MEMBER_NS = 0
_NOISE_NS = 1


def substream(seq: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Child seed sequence keyed by ``key``, independent of its siblings.

    Unlike ``SeedSequence.spawn`` this is a pure function of ``(seq, key)``.
    """
    return np.random.SeedSequence(entropy=seq.entropy, spawn_key=seq.spawn_key + key)


def rng_from(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.default_rng(seq)


def as_seed_sequence(seed: Union[int, np.random.SeedSequence]) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def calibration_stream(seed) -> np.random.SeedSequence:
    """Root stream for realizing alterations on calibration points."""
    return substream(as_seed_sequence(seed), CALIBRATION_NS)


def evaluation_stream(seed) -> np.random.SeedSequence:
    """Root stream for realizing alterations on test points."""
    return substream(as_seed_sequence(seed), EVALUATION_NS)


def training_stream(seed) -> np.random.SeedSequence:
    """Root stream for alterations applied during model training."""
    return substream(as_seed_sequence(seed), TRAINING_NS)


def data_stream(seed) -> np.random.SeedSequence:
    """Root stream for data generation and shuffling."""
    return substream(as_seed_sequence(seed), DATA_NS)


# ---------------------------------------------------------------------------
# Tasks, examples, datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    """Prediction task: regression or K-class classification."""

    kind: str
    n_classes: Optional[int] = None

    @classmethod
    def regression(cls) -> "Task":
        return cls("regression")

    @classmethod
    def classification(cls, n_classes: int) -> "Task":
        if n_classes < 2:
            raise ValueError("classification needs at least 2 classes")
        return cls("classification", n_classes)

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"


@dataclass(frozen=True, eq=False)
class Example:
    """One observation: a covariate vector and its label."""

    x: np.ndarray
    y: float


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Train / calibration / test split of one source sample.

    Covariates are row vectors of a fixed dimension ``d``; labels are floats
    for regression and integer class indices in ``[0, K)`` for classification.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_calib: np.ndarray
    y_calib: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    task: Task
    label_names: Optional[tuple[str, ...]] = None
    feature_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        for name in ("x_train", "x_calib", "x_test"):
            x = getattr(self, name)
            if x.ndim != 2:
                raise ValueError(f"{name} must be 2-D")
            _check_finite(x, name)
        if self.x_calib.shape[0] == 0:
            raise ValueError("calibration split is empty")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        widths = {self.x_train.shape[1], self.x_calib.shape[1], self.x_test.shape[1]}
        if len(widths) != 1:
            raise ValueError("splits disagree on dimension")
        for name in ("y_train", "y_calib", "y_test"):
            _check_finite(np.asarray(getattr(self, name), dtype=float), name)
        if self.task.is_classification:
            k = self.task.n_classes
            for name in ("y_train", "y_calib", "y_test"):
                y = getattr(self, name)
                if y.size and (y.min() < 0 or y.max() >= k):
                    raise ValueError(f"{name} has class index outside [0, {k})")

    @property
    def d(self) -> int:
        return self.x_calib.shape[1]

    @property
    def label_range(self) -> Optional[tuple[float, float]]:
        """Observed label range over all splits; regression only."""
        if self.task.is_classification:
            return None
        ys = np.concatenate([self.y_train, self.y_calib, self.y_test])
        return float(ys.min()), float(ys.max())


# ---------------------------------------------------------------------------
# Prediction sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("interval with lo > hi")

    def contains(self, y: float) -> bool:
        return self.lo <= y <= self.hi

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class LabelSet:
    members: frozenset[int]

    def contains(self, y: int) -> bool:
        return int(y) in self.members

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class FullSet:
    """The entire label space; produced when a threshold is infinite."""

    def contains(self, y) -> bool:
        return True


PredictionSet = Union[Interval, LabelSet, FullSet]


# ---------------------------------------------------------------------------
# Conformity scorers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionScorer:
    """Absolute-residual score s(x, y) = |mu(x) - y| for a regression model."""

    model: object  # anything with predict(X) -> (n,)

    @property
    def task(self) -> Task:
        return Task.regression()

    def predict(self, x2d: np.ndarray) -> np.ndarray:
        return np.asarray(self.model.predict(np.atleast_2d(x2d)), dtype=float)

    def score(self, x: np.ndarray, y: float) -> float:
        return float(abs(self.predict(x[None, :])[0] - y))

    def score_batch(self, x2d: np.ndarray, y) -> np.ndarray:
        mu = self.predict(x2d)
        return np.abs(mu - np.broadcast_to(np.asarray(y, dtype=float), mu.shape))


@dataclass(frozen=True, eq=False)
class ClassificationScorer:
    """Score s(x, y) = 1 - p(y | x), with probabilities floored away from {0, 1}."""

    model: object  # anything with predict_proba(X) -> (n, K)
    n_classes: int

    @property
    def task(self) -> Task:
        return Task.classification(self.n_classes)

    def probabilities(self, x2d: np.ndarray) -> np.ndarray:
        p = np.asarray(self.model.predict_proba(np.atleast_2d(x2d)), dtype=float)
        return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)

    def score(self, x: np.ndarray, y: int) -> float:
        return float(1.0 - self.probabilities(x[None, :])[0, int(y)])

    def score_batch(self, x2d: np.ndarray, y) -> np.ndarray:
        p = self.probabilities(x2d)
        idx = np.broadcast_to(np.asarray(y, dtype=int), (p.shape[0],))
        return 1.0 - p[np.arange(p.shape[0]), idx]


ConformityScorer = Union[RegressionScorer, ClassificationScorer]


# ---------------------------------------------------------------------------
# Alteration families
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AlterationFamily:
    """An ordered finite set of stochastic covariate alterations.

    Two layouts exist.  Independent families list explicit ``members``, each
    realized from its own keyed substream.  Shared-trajectory families (kind
    ``iterative-search`` or ``simulator``) store a single ``step`` function;
    member k is then the k-th state of one rollout per point, with member 0
    the unaltered input.  An optional additive Gaussian wrap (``noise_chol``)
    perturbs every member's output from independent substreams.
    """

    kind: str  # utility-cost | iterative-search | simulator | misspecified | identity
    members: tuple[Alteration, ...] = ()
    step: Optional[Alteration] = None
    n_steps: int = 0
    noise_scale: float = 0.0
    noise_chol: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.step is None and not self.members:
            raise ValueError("family needs members or a trajectory step")
        if self.step is not None and self.members:
            raise ValueError("family cannot mix explicit members with a trajectory")
        if self.step is not None and self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")

    @property
    def shared_trajectory(self) -> bool:
        return self.step is not None

    def __len__(self) -> int:
        return self.n_steps + 1 if self.shared_trajectory else len(self.members)

    @property
    def is_identity(self) -> bool:
        """True when every member returns its input unchanged (fast path)."""
        if self.noise_scale > 0.0:
            return False
        if self.kind == "identity":
            return True
        return self.shared_trajectory and self.n_steps == 0

    def realize_all(self, x: np.ndarray, point_seq: np.random.SeedSequence) -> np.ndarray:
        """Altered covariates for every member, stacked as rows.

        Member j draws from substream (point, member-namespace, j); trajectory
        step k reuses key k so extending ``n_steps`` preserves earlier states.
        """
        x = np.asarray(x, dtype=float)
        if self.shared_trajectory:
            states = [x]
            current = x
            for k in range(1, self.n_steps + 1):
                current = self.step(current, rng_from(substream(point_seq, _MEMBER_NS, k)))
                states.append(np.asarray(current, dtype=float))
        else:
            states = [
                np.asarray(member(x, rng_from(substream(point_seq, _MEMBER_NS, j))), dtype=float)
                for j, member in enumerate(self.members)
            ]
        out = np.stack(states)
        if self.noise_scale > 0.0:
            for j in range(out.shape[0]):
                z = rng_from(substream(point_seq, _NOISE_NS, j)).standard_normal(out.shape[1])
                out[j] = out[j] + self.noise_chol @ z
        return out


def _identity(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return x


def identity_family() -> AlterationFamily:
    """The singleton family containing only the no-alteration map."""
    return AlterationFamily(kind="identity", members=(_identity,))


# ---------------------------------------------------------------------------
# Sup-scores
# ---------------------------------------------------------------------------


def strategic_score(
    scorer: ConformityScorer,
    family: AlterationFamily,
    x: np.ndarray,
    y,
    point_seq: np.random.SeedSequence,
) -> float:
    """sup over the family of s(Delta(x), y), each member realized once.

    For shared-trajectory families the members are the prefixes of one
    rollout, so the sup is the max over trajectory states.
    """
    if family.is_identity:
        return float(scorer.score(np.asarray(x, dtype=float), y))
    altered = family.realize_all(x, point_seq)
    return float(scorer.score_batch(altered, y).max())


def sup_scores(
    scorer: ConformityScorer,
    family: AlterationFamily,
    x2d: np.ndarray,
    y: np.ndarray,
    stream: np.random.SeedSequence,
) -> np.ndarray:
    """Per-point sup-scores; point i uses substream (stream, i)."""
    x2d = np.asarray(x2d, dtype=float)
    if family.is_identity:
        return scorer.score_batch(x2d, y)
    out = np.empty(x2d.shape[0])
    for i in range(x2d.shape[0]):
        out[i] = strategic_score(scorer, family, x2d[i], y[i], substream(stream, i))
    return out


def prefix_sup_scores(
    scorer: ConformityScorer,
    family: AlterationFamily,
    x2d: np.ndarray,
    y: np.ndarray,
    stream: np.random.SeedSequence,
) -> np.ndarray:
    """Running max of scores along trajectory prefixes, shape (n, n_steps+1).

    Column k equals the sup-score under the same family truncated at k steps;
    one rollout per point serves every truncation at once.
    """
    if not family.shared_trajectory:
        raise ValueError("prefix sup-scores need a shared-trajectory family")
    x2d = np.asarray(x2d, dtype=float)
    out = np.empty((x2d.shape[0], len(family)))
    for i in range(x2d.shape[0]):
        altered = family.realize_all(x2d[i], substream(stream, i))
        out[i] = np.maximum.accumulate(scorer.score_batch(altered, y[i]))
    return out
