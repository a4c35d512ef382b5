"""Domain types and the sup-score machinery."""

import numpy as np
import pytest

from stratcp.alterations import SearchConfig, build_iterative_family, proposal_chol
from stratcp.core import (
    AlterationFamily,
    FullSet,
    Interval,
    LabelSet,
    RegressionScorer,
    SplitDataset,
    Task,
    identity_family,
    prefix_sup_scores,
    rng_from,
    strategic_score,
    substream,
    sup_scores,
)

from conftest import StubRegressor


def _seq(seed=0, *key):
    return substream(np.random.SeedSequence(seed), *key)


# ---------------------------------------------------------------------------
# Prediction sets and dataset validation
# ---------------------------------------------------------------------------


def test_interval_rejects_reversed_bounds():
    with pytest.raises(ValueError):
        Interval(lo=2.0, hi=1.0)
    assert Interval(0.0, 1.0).contains(0.5)
    assert Interval(0.0, 1.0).length == 1.0


def test_label_set_membership():
    s = LabelSet(members=frozenset({0, 2}))
    assert s.contains(2) and not s.contains(1)
    assert s.size == 2
    assert FullSet().contains(123.0)


def _tiny_split(**overrides):
    base = dict(
        x_train=np.zeros((2, 2)),
        y_train=np.zeros(2),
        x_calib=np.ones((2, 2)),
        y_calib=np.zeros(2),
        x_test=np.ones((1, 2)),
        y_test=np.zeros(1),
        task=Task.regression(),
    )
    base.update(overrides)
    return SplitDataset(**base)


def test_dataset_rejects_nan_covariates():
    bad = np.ones((2, 2))
    bad[0, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        _tiny_split(x_calib=bad)


def test_dataset_rejects_empty_calibration():
    with pytest.raises(ValueError, match="empty"):
        _tiny_split(x_calib=np.zeros((0, 2)), y_calib=np.zeros(0))


def test_dataset_rejects_out_of_range_class():
    with pytest.raises(ValueError, match="class index"):
        _tiny_split(task=Task.classification(2), y_calib=np.array([0, 2]))


def test_label_range_spans_all_splits():
    ds = _tiny_split(y_train=np.array([-3.0, 1.0]), y_test=np.array([7.0]))
    assert ds.label_range == (-3.0, 7.0)


# ---------------------------------------------------------------------------
# strategic_score
# ---------------------------------------------------------------------------


def test_identity_family_reduces_to_plain_score():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    x, y = np.array([2.5]), 1.0
    assert strategic_score(scorer, identity_family(), x, y, _seq()) == scorer.score(x, y)


def test_sup_over_deterministic_shift():
    # mu(x) = x; at x=2, y=2 the plain score is 0 and the shifted score is 3.
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    shift = lambda x, rng: np.array([5.0])
    family = AlterationFamily(kind="custom", members=(lambda x, rng: x, shift))
    assert strategic_score(scorer, family, np.array([2.0]), 2.0, _seq()) == 3.0


def test_iterative_sup_matches_trajectory_replay_oracle():
    """Replay the rollout from raw substreams and take the prefix max by hand."""
    cfg = SearchConfig(candidates_per_step=2, step_scale=0.3, k_max=3)
    sigma = np.array([[1.0]])
    u = lambda cands: cands[:, 0]  # pushes x upward
    family = build_iterative_family(u, cfg, sigma)
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    x, y = np.array([0.5]), 0.2
    point = _seq(42, 7)

    chol = proposal_chol(sigma, cfg.step_scale)
    states = [x]
    current = x
    for k in range(1, cfg.k_max + 1):
        rng = rng_from(substream(point, 0, k))
        proposals = current + rng.standard_normal((2, 1)) @ chol.T
        candidates = np.vstack([current[None, :], proposals])
        utilities = candidates[:, 0]
        current = candidates[int(np.argmax(utilities))]
        states.append(current)
    expected = max(abs(float(s[0]) - y) for s in states)

    assert strategic_score(scorer, family, x, y, point) == pytest.approx(expected, abs=0)


def test_score_at_least_plain_when_identity_present():
    scorer = RegressionScorer(model=StubRegressor([1.0, -0.5]))
    rng = np.random.default_rng(3)
    noisy = lambda x, r: x + r.normal(size=x.shape)
    family = AlterationFamily(kind="custom", members=(lambda x, r: x, noisy, noisy))
    for i in range(25):
        x = rng.normal(size=2)
        y = rng.normal()
        assert strategic_score(scorer, family, x, y, _seq(9, i)) >= scorer.score(x, y)


def test_strategic_score_is_deterministic():
    scorer = RegressionScorer(model=StubRegressor([2.0]))
    noisy = lambda x, r: x + r.normal(size=x.shape)
    family = AlterationFamily(kind="custom", members=(noisy, noisy))
    x, y = np.array([0.3]), 1.0
    first = strategic_score(scorer, family, x, y, _seq(5))
    second = strategic_score(scorer, family, x, y, _seq(5))
    assert first == second


def test_appending_member_never_decreases_score():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    noisy = lambda x, r: x + r.normal(size=x.shape)
    small = AlterationFamily(kind="custom", members=(noisy, noisy))
    large = AlterationFamily(kind="custom", members=(noisy, noisy, noisy))
    rng = np.random.default_rng(11)
    for i in range(40):
        x = rng.normal(size=1)
        y = rng.normal()
        point = _seq(77, i)
        assert strategic_score(scorer, large, x, y, point) >= strategic_score(
            scorer, small, x, y, point
        )


def test_trajectory_prefix_stability_under_longer_kmax():
    """Extending a trajectory family must not disturb earlier states."""
    cfg_short = SearchConfig(candidates_per_step=2, k_max=2)
    cfg_long = SearchConfig(candidates_per_step=2, k_max=5)
    sigma = np.eye(2)
    u = lambda cands: -np.sum(cands**2, axis=1)
    short = build_iterative_family(u, cfg_short, sigma)
    long = build_iterative_family(u, cfg_long, sigma)
    x = np.array([1.0, -2.0])
    point = _seq(13)
    np.testing.assert_array_equal(
        short.realize_all(x, point), long.realize_all(x, point)[:3]
    )


def test_prefix_sup_scores_match_truncated_families(regression_pipeline):
    ds, scorer = regression_pipeline
    sigma = np.eye(ds.d)
    u = lambda cands: cands[:, 0]
    x, y = ds.x_test[:15], ds.y_test[:15]
    full = build_iterative_family(u, SearchConfig(k_max=4), sigma)
    prefix = prefix_sup_scores(scorer, full, x, y, _seq(31))
    for k in (0, 2, 4):
        truncated = build_iterative_family(u, SearchConfig(k_max=k), sigma)
        np.testing.assert_allclose(
            prefix[:, k], sup_scores(scorer, truncated, x, y, _seq(31)), rtol=0, atol=0
        )


def test_family_requires_members_or_step():
    with pytest.raises(ValueError):
        AlterationFamily(kind="custom")


def test_identity_fast_path_flag():
    assert identity_family().is_identity
    assert build_iterative_family(lambda c: c[:, 0], SearchConfig(k_max=0), np.eye(1)).is_identity
    assert not build_iterative_family(
        lambda c: c[:, 0], SearchConfig(k_max=1), np.eye(1)
    ).is_identity
