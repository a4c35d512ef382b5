"""Base predictive models: exact ridge regression, softmax logistic
classification, and the repeated-risk-minimization loop that refits a model
against the covariate alterations it induces.

Both learners are deterministic: ridge is a normal-equation solve and
logistic starts from zero weights with full-batch gradient descent, so a
given training set always produces the same weights bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Alteration, rng_from, substream, training_stream

__all__ = [
    "LogisticClassifier",
    "LogisticConfig",
    "RidgeRegressor",
    "fit_logistic",
    "fit_ridge",
    "logistic_loss_and_grad",
    "repeated_risk_minimization",
]


def _with_bias(x2d: np.ndarray) -> np.ndarray:
    x2d = np.atleast_2d(np.asarray(x2d, dtype=float))
    return np.hstack([x2d, np.ones((x2d.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class RidgeRegressor:
    """Linear model with L2 penalty, solved exactly. Bias weight last."""

    weights: np.ndarray  # (d + 1,)
    ridge: float

    def predict(self, x2d: np.ndarray) -> np.ndarray:
        return _with_bias(x2d) @ self.weights


def fit_ridge(x2d: np.ndarray, y: np.ndarray, ridge: float) -> RidgeRegressor:
    """Solve (A^T A + ridge I) w = A^T y with a bias column appended to A."""
    if ridge <= 0:
        raise ValueError("ridge must be > 0")
    a = _with_bias(x2d)
    if a.shape[0] == 0:
        raise ValueError("empty training set")
    gram = a.T @ a + ridge * np.eye(a.shape[1])
    weights = np.linalg.solve(gram, a.T @ np.asarray(y, dtype=float))
    return RidgeRegressor(weights=weights, ridge=float(ridge))


@dataclass(frozen=True)
class LogisticConfig:
    step_size: float = 0.1
    epochs: int = 500
    l2: float = 1e-4


@dataclass(frozen=True, eq=False)
class LogisticClassifier:
    """Multinomial logistic model; weight row per class, bias column last."""

    weights: np.ndarray  # (K, d + 1)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, x2d: np.ndarray) -> np.ndarray:
        return _with_bias(x2d) @ self.weights.T

    def predict_proba(self, x2d: np.ndarray) -> np.ndarray:
        z = self.logits(x2d)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x2d: np.ndarray) -> np.ndarray:
        return self.logits(x2d).argmax(axis=1)


def logistic_loss_and_grad(
    weights: np.ndarray, x2d: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus (l2 / 2) ||W||^2, with its exact gradient."""
    a = _with_bias(x2d)
    n = a.shape[0]
    z = a @ weights.T
    z -= z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    y = np.asarray(y, dtype=int)
    loss = float(np.mean(log_norm - z[np.arange(n), y]) + 0.5 * l2 * np.sum(weights**2))
    p = np.exp(z - log_norm[:, None])
    p[np.arange(n), y] -= 1.0
    grad = p.T @ a / n + l2 * weights
    return loss, grad


def fit_logistic(
    x2d: np.ndarray, y: np.ndarray, n_classes: int, cfg: LogisticConfig = LogisticConfig()
) -> LogisticClassifier:
    """Full-batch gradient descent from zero weights.

    The step size is halved whenever a proposed update would increase the
    loss, so the per-epoch training loss is non-increasing.

    Raises ``ValueError`` when some class is absent from ``y``: a degenerate
    split cannot support a K-class fit.
    """
    y = np.asarray(y, dtype=int)
    present = np.unique(y)
    if len(present) != n_classes:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        raise ValueError(f"classes missing from training data: {missing}")
    weights = np.zeros((n_classes, x2d.shape[1] + 1))
    step = cfg.step_size
    loss, grad = logistic_loss_and_grad(weights, x2d, y, cfg.l2)
    for _ in range(cfg.epochs):
        accepted = False
        while step >= 1e-12:
            candidate = weights - step * grad
            new_loss, new_grad = logistic_loss_and_grad(candidate, x2d, y, cfg.l2)
            if new_loss <= loss:
                weights, loss, grad = candidate, new_loss, new_grad
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return LogisticClassifier(weights=weights)


def repeated_risk_minimization(
    x_train: np.ndarray,
    y_train: np.ndarray,
    fit_fn: Callable[[np.ndarray, np.ndarray], object],
    alteration_builder: Callable[[object], Alteration],
    rounds: int = 10,
    seed: int = 0,
    alter_original: bool = True,
):
    """Alternate fitting and population best-response for ``rounds`` rounds.

    Each round fits on the current covariates, asks ``alteration_builder``
    for the most effortful alteration induced by that model, and applies it
    to the original training covariates to produce the next round's inputs
    (set ``alter_original=False`` to re-alter the current covariates
    instead).  Round r, point i draws from substream (seed, training, r, i).
    Returns the model fit on the final covariates; ``rounds=0`` is a plain
    fit.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    x_train = np.asarray(x_train, dtype=float)
    root = training_stream(seed)
    current = x_train
    model = fit_fn(current, y_train)
    for r in range(rounds):
        alteration = alteration_builder(model)
        base = x_train if alter_original else current
        current = np.stack(
            [
                np.asarray(alteration(base[i], rng_from(substream(root, r, i))), dtype=float)
                for i in range(base.shape[0])
            ]
        )
        model = fit_fn(current, y_train)
    return model
