"""Constructions of strategic alteration families.

Three builders are provided, all driven by a utility function over altered
covariates:

* ``build_utility_cost_family`` — each member approximately maximizes
  utility minus a Mahalanobis movement cost scaled by 1/lambda, via one-shot
  random search; one member per lambda in the grid.
* ``build_iterative_family`` — members are the prefixes of a local
  random-search trajectory (sample a few Gaussian moves per step, keep the
  best by utility, optionally allowing "do nothing").
* ``build_simulator_family`` — members are the prefixes of repeated calls to
  an arbitrary stochastic one-step simulator.

``misspecify`` wraps any family with additive Gaussian output noise, which
models an evaluation-time population that deviates from the calibrated one.
Alterations act on covariates only; labels are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .core import (
    Alteration,
    AlterationFamily,
    ClassificationScorer,
    ConformityScorer,
    RegressionScorer,
)

__all__ = [
    "MahalanobisCost",
    "Omega",
    "RationalUtility",
    "SearchConfig",
    "UtilityFn",
    "build_iterative_family",
    "build_simulator_family",
    "build_utility_cost_family",
    "iterative_search_step",
    "mahalanobis_norm",
    "misspecify",
    "proposal_chol",
    "rational_utility",
    "regularized_covariance",
    "utility_cost_alteration",
]

# A label region the agent wants excluded from prediction sets: a set of
# class indices (classification) or a closed interval (regression).
Omega = Union[frozenset, tuple]

# Batched utility: (m, d) candidate matrix -> (m,) utilities.
UtilityFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the random-search optimizers behind the family builders."""

    candidates_per_step: int = 2  # m, proposals per trajectory step
    step_scale: float = 0.2  # proposal covariance = step_scale * Sigma
    include_zero_step: bool = True  # allow "do nothing" at each step
    k_max: int = 0  # trajectory length for iterative families
    candidate_count: int = 500  # proposals for the one-shot argmax
    lambda_grid: tuple[float, ...] = (1e-7, 1.0, 5.0)

    def __post_init__(self):
        if self.candidates_per_step < 1:
            raise ValueError("candidates_per_step must be >= 1")
        if self.step_scale <= 0:
            raise ValueError("step_scale must be > 0")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")
        if any(lam < 0 for lam in self.lambda_grid):
            raise ValueError("lambda grid entries must be >= 0")


# ---------------------------------------------------------------------------
# Covariance estimation and costs
# ---------------------------------------------------------------------------


def regularized_covariance(x2d: np.ndarray, ridge_scale: float = 1e-6) -> np.ndarray:
    """Empirical covariance plus a trace-scaled ridge for positive-definiteness."""
    x2d = np.atleast_2d(np.asarray(x2d, dtype=float))
    if x2d.shape[0] < 2:
        raise ValueError("covariance estimation needs at least 2 rows")
    sigma = np.atleast_2d(np.cov(x2d, rowvar=False))
    d = sigma.shape[0]
    scale = np.trace(sigma) / d
    if scale <= 0:
        scale = 1.0
    return sigma + ridge_scale * scale * np.eye(d)


def mahalanobis_norm(v: np.ndarray, sigma_inv: np.ndarray) -> float:
    return float(np.sqrt(v @ sigma_inv @ v))


@dataclass(frozen=True, eq=False)
class MahalanobisCost:
    """Quadratic movement cost c(x, x') = (x - x')^T Sigma^-1 (x - x')."""

    sigma_inv: np.ndarray

    @classmethod
    def from_covariance(cls, sigma: np.ndarray) -> "MahalanobisCost":
        return cls(sigma_inv=np.linalg.inv(sigma))

    @classmethod
    def from_data(cls, x2d: np.ndarray, ridge_scale: float = 1e-6) -> "MahalanobisCost":
        return cls.from_covariance(regularized_covariance(x2d, ridge_scale))

    def __call__(self, x: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(candidates) - np.asarray(x, dtype=float)
        return np.einsum("ij,jk,ik->i", diff, self.sigma_inv, diff)


# ---------------------------------------------------------------------------
# Utilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RationalUtility:
    """Utility of an agent trying to push the label region omega out of the
    predicted set: the smallest conformity score over omega, so higher values
    mean omega is less plausible at the altered point.

    For regression, ``farthest_end=True`` switches to the distance to the far
    end of the interval instead of the near one.
    """

    scorer: ConformityScorer
    omega: Omega
    farthest_end: bool = False

    def __post_init__(self):
        if isinstance(self.omega, frozenset):
            if not self.omega:
                raise ValueError("omega is empty")
            if not isinstance(self.scorer, ClassificationScorer):
                raise ValueError("class-set omega needs a classification scorer")
            if max(self.omega) >= self.scorer.n_classes or min(self.omega) < 0:
                raise ValueError("omega contains an invalid class index")
        else:
            lo, hi = self.omega
            if lo > hi:
                raise ValueError("omega interval with lo > hi")
            if not isinstance(self.scorer, RegressionScorer):
                raise ValueError("interval omega needs a regression scorer")

    def __call__(self, candidates: np.ndarray) -> np.ndarray:
        candidates = np.atleast_2d(candidates)
        if isinstance(self.omega, frozenset):
            p = self.scorer.probabilities(candidates)
            return 1.0 - p[:, sorted(self.omega)].max(axis=1)
        lo, hi = self.omega
        mu = self.scorer.predict(candidates)
        if self.farthest_end:
            return np.maximum(np.abs(mu - lo), np.abs(mu - hi))
        return np.maximum.reduce([lo - mu, mu - hi, np.zeros_like(mu)])


def rational_utility(scorer: ConformityScorer, omega: Omega, x: np.ndarray) -> float:
    """Utility of a single candidate point; see ``RationalUtility``."""
    return float(RationalUtility(scorer, omega)(np.asarray(x, dtype=float)[None, :])[0])


# ---------------------------------------------------------------------------
# Family constructions
# ---------------------------------------------------------------------------


def proposal_chol(sigma: np.ndarray, scale: float) -> np.ndarray:
    """Cholesky factor of the proposal covariance scale * Sigma."""
    return np.linalg.cholesky(scale * np.asarray(sigma, dtype=float))


def utility_cost_alteration(
    u: UtilityFn,
    cost: MahalanobisCost,
    lam: float,
    cfg: SearchConfig,
    chol: np.ndarray,
    x: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One-shot random-search argmax of u(x') - c(x, x') / lam.

    The unaltered point is always evaluated first, so ties favor no
    alteration.  ``lam == 0`` means infinite cost weight: under a
    positive-definite cost only zero-cost moves survive, which is the
    unaltered point itself.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    x = np.asarray(x, dtype=float)
    if lam == 0.0:
        return x
    proposals = x + rng.standard_normal((cfg.candidate_count, x.shape[0])) @ chol.T
    candidates = np.vstack([x[None, :], proposals])
    objective = u(candidates) - cost(x, candidates) / lam
    return candidates[int(np.argmax(objective))]


def build_utility_cost_family(
    u: UtilityFn, cost: MahalanobisCost, cfg: SearchConfig, sigma: np.ndarray
) -> AlterationFamily:
    """One member per lambda in the grid, ordered as the grid is."""
    if not cfg.lambda_grid:
        raise ValueError("lambda grid is empty")
    chol = proposal_chol(sigma, cfg.step_scale)

    def member_for(lam: float) -> Alteration:
        def alter(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
            return utility_cost_alteration(u, cost, lam, cfg, chol, x, rng)

        return alter

    return AlterationFamily(
        kind="utility-cost", members=tuple(member_for(lam) for lam in cfg.lambda_grid)
    )


def iterative_search_step(
    u: UtilityFn,
    cfg: SearchConfig,
    chol: np.ndarray,
    x_k: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One local random-search step: best of m Gaussian moves by utility.

    With ``include_zero_step`` the current point enters the comparison first,
    so ties keep the agent in place and utility never decreases along the
    trajectory.
    """
    x_k = np.asarray(x_k, dtype=float)
    proposals = x_k + rng.standard_normal((cfg.candidates_per_step, x_k.shape[0])) @ chol.T
    if cfg.include_zero_step:
        candidates = np.vstack([x_k[None, :], proposals])
    else:
        candidates = proposals
    return candidates[int(np.argmax(u(candidates)))]


def build_iterative_family(
    u: UtilityFn, cfg: SearchConfig, sigma: np.ndarray
) -> AlterationFamily:
    """Trajectory family whose member k is k local search steps."""
    chol = proposal_chol(sigma, cfg.step_scale)

    def step(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return iterative_search_step(u, cfg, chol, x, rng)

    return AlterationFamily(kind="iterative-search", step=step, n_steps=cfg.k_max)


def build_simulator_family(m_step: Alteration, k_max: int) -> AlterationFamily:
    """Trajectory family whose member k is k calls to the simulator step."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    return AlterationFamily(kind="simulator", step=m_step, n_steps=k_max)


def misspecify(
    family: AlterationFamily, lam_noise: float, sigma: np.ndarray
) -> AlterationFamily:
    """Wrap every member with additive N(0, lam_noise * Sigma) output noise.

    Noise draws come from substreams independent of the members' own, so the
    underlying alterations realize exactly as in the unwrapped family.
    ``lam_noise == 0`` returns the family unchanged.
    """
    if lam_noise < 0:
        raise ValueError("lam_noise must be >= 0")
    if lam_noise == 0.0:
        return family
    if family.noise_scale > 0.0:
        raise ValueError("family already carries output noise; wrap the original")
    chol = np.linalg.cholesky(lam_noise * np.asarray(sigma, dtype=float))
    return replace(family, kind="misspecified", noise_scale=float(lam_noise), noise_chol=chol)
