"""Coverage estimators, bootstrap, the Gaussian TV oracle, and the
robustness / tightness / training-conditional checks."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from stratcp.calibrate import CalibratedPredictor, calibrate_strategic
from stratcp.core import (
    AlterationFamily,
    FullSet,
    Interval,
    LabelSet,
    RegressionScorer,
    identity_family,
    rng_from,
)
from stratcp.metrics import (
    avg_size_diff,
    bootstrap_ci,
    coverage_indicators,
    evaluate_predictors,
    gaussian_tv,
    robustness_gap_check,
    set_size,
    set_sizes,
    strategic_coverage,
    tightness_check,
    training_conditional_check,
)

from conftest import StubRegressor


def _marginal(scorer, threshold, alpha=0.1, family=None, n=100):
    return CalibratedPredictor(
        scorer=scorer,
        alpha=alpha,
        family=family or identity_family(),
        n_calib=n,
        mode="marginal",
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


def test_infinite_threshold_covers_everything():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    pred = _marginal(scorer, math.inf)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(50, 1)), rng.normal(size=50)
    assert strategic_coverage(pred, x, y) == 1.0


def test_identity_family_coverage_equals_plain_membership():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    pred = _marginal(scorer, 0.8)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 1))
    y = x[:, 0] + rng.normal(size=200)
    expected = np.mean(np.abs(x[:, 0] - y) <= 0.8)
    assert strategic_coverage(pred, x, y) == expected


def test_calibrated_pipeline_hits_nominal_coverage():
    """Matched calibration/evaluation protocol lands in the tight window
    [1 - alpha, 1 - alpha + 1/(n+1)] up to binomial noise."""
    rng = np.random.default_rng(2)
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    noisy = lambda v, r: v + 0.3 * r.normal(size=v.shape)
    family = AlterationFamily(kind="custom", members=(lambda v, r: v, noisy))
    n_cal, n_test = 999, 4000
    x_cal = rng.normal(size=(n_cal, 1))
    y_cal = x_cal[:, 0] + rng.normal(size=n_cal)
    x_te = rng.normal(size=(n_test, 1))
    y_te = x_te[:, 0] + rng.normal(size=n_test)
    pred = calibrate_strategic(x_cal, y_cal, scorer, family, 0.1, 17)
    cov = strategic_coverage(pred, x_te, y_te, family, 17)
    se = math.sqrt(0.9 * 0.1 / n_test)
    assert 0.9 - 3 * se <= cov <= 0.9 + 1.0 / (n_cal + 1) + 3 * se


def test_superset_family_coverage_monotone_at_fixed_threshold():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    noisy = lambda v, r: v + r.normal(size=v.shape)
    small = AlterationFamily(kind="custom", members=(lambda v, r: v, noisy))
    large = AlterationFamily(kind="custom", members=(lambda v, r: v, noisy, noisy))
    pred = _marginal(scorer, 1.2)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(300, 1))
    y = x[:, 0] + rng.normal(size=300)
    cov_small = strategic_coverage(pred, x, y, small, 5)
    cov_large = strategic_coverage(pred, x, y, large, 5)
    assert cov_large <= cov_small


def test_label_mode_uses_per_class_thresholds(classification_pipeline):
    ds, scorer = classification_pipeline
    thresholds = np.array([0.9, math.inf, 0.2])
    pred = CalibratedPredictor(
        scorer=scorer, alpha=0.1, family=identity_family(), n_calib=10,
        mode="label", label_thresholds=thresholds,
    )
    covered = coverage_indicators(pred, ds.x_test, ds.y_test)
    scores = scorer.score_batch(ds.x_test, ds.y_test)
    np.testing.assert_array_equal(covered, scores <= thresholds[ds.y_test])


# ---------------------------------------------------------------------------
# Sizes
# ---------------------------------------------------------------------------


def test_set_size_examples():
    assert set_size(Interval(1.5, 2.5)) == 1.0
    assert set_size(LabelSet(frozenset({0, 1}))) == 2
    assert set_size(FullSet(), label_range=(0.0, 10.0)) == 10.0
    with pytest.raises(ValueError):
        set_size(FullSet())


def test_identical_predictors_have_zero_size_diff():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    pred = _marginal(scorer, 0.7)
    x = np.random.default_rng(4).normal(size=(50, 1))
    assert avg_size_diff(pred, pred, x) == 0.0


def test_regression_size_diff_is_twice_the_threshold_gap():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    a = _marginal(scorer, 1.3)
    b = _marginal(scorer, 0.9)
    x = np.random.default_rng(5).normal(size=(40, 1))
    assert avg_size_diff(a, b, x) == pytest.approx(2 * (1.3 - 0.9), abs=1e-12)


def test_full_sets_clip_to_label_range():
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    pred = _marginal(scorer, math.inf)
    sizes = set_sizes(pred, np.zeros((3, 1)), label_range=(-2.0, 8.0))
    np.testing.assert_array_equal(sizes, [10.0, 10.0, 10.0])


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_of_constant_sample_is_degenerate():
    assert bootstrap_ci([3.3] * 40) == (3.3, 3.3)
    assert bootstrap_ci(np.ones(25)) == (1.0, 1.0)


def test_bootstrap_width_matches_normal_approximation():
    rng = np.random.default_rng(6)
    draws = (rng.random(1000) < 0.9).astype(float)
    p_hat = draws.mean()
    lo, hi = bootstrap_ci(draws, b=2000, seed=7)
    expected = 2 * 1.96 * math.sqrt(p_hat * (1 - p_hat) / 1000)
    assert expected / 1.3 <= hi - lo <= expected * 1.3


def test_bootstrap_contains_the_point_estimate():
    rng = np.random.default_rng(7)
    for i in range(10):
        data = rng.normal(size=rng.integers(20, 200))
        lo, hi = bootstrap_ci(data, seed=i)
        assert lo <= data.mean() <= hi


# ---------------------------------------------------------------------------
# Gaussian TV oracle
# ---------------------------------------------------------------------------


def _phi_quadrature(z: float) -> float:
    """Independent high-precision normal CDF via quadrature of the density."""
    value, _ = quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), 0.0, z)
    return 0.5 + value


def test_tv_zero_for_identical_distributions():
    assert gaussian_tv(0.0) == 0.0


def test_tv_approaches_one_in_the_limit():
    assert 0.999999 < gaussian_tv(50.0) < 1.0
    assert gaussian_tv(1e6) < 1.0


def test_tv_matches_quadrature_oracle():
    for d in (0.1, 0.5, 1.0, 2.0, 3.7, 6.0):
        expected = 2 * _phi_quadrature(d / 2) - 1
        assert gaussian_tv(d) == pytest.approx(expected, abs=1e-9)


def test_tv_at_two_matches_known_value():
    assert gaussian_tv(2.0) == pytest.approx(0.682689, abs=1e-5)


def test_tv_strictly_increasing_and_bounded():
    ds = np.linspace(0.0, 12.0, 400)
    values = [gaussian_tv(d) for d in ds]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert all(0.0 <= v < 1.0 for v in values)
    with pytest.raises(ValueError):
        gaussian_tv(-0.1)


# ---------------------------------------------------------------------------
# Robustness check
# ---------------------------------------------------------------------------


def _dither_member(chol):
    return lambda x, rng: x + chol @ rng.standard_normal(x.shape[0])


def test_no_misspecification_keeps_nominal_coverage():
    rng = np.random.default_rng(8)
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    family = AlterationFamily(kind="custom", members=(_dither_member(0.5 * np.eye(1)),))
    x_cal = rng.normal(size=(999, 1))
    y_cal = x_cal[:, 0] + rng.normal(size=999)
    x_te = rng.normal(size=(3000, 1))
    y_te = x_te[:, 0] + rng.normal(size=3000)
    pred = calibrate_strategic(x_cal, y_cal, scorer, family, 0.1, 9)
    report = robustness_gap_check(pred, x_te, y_te, family, tv_bound=0.0, seed=9)
    assert not report.violated
    assert report.coverage >= 0.9 - 3 * math.sqrt(0.09 / 3000)


def test_gaussian_mean_shift_respects_closed_form_bound():
    """Calibration member x + N(0, S); true member x + shift + N(0, S).
    The conditional TV is exactly the closed form at the Mahalanobis norm of
    the shift under S, and coverage must not fall below 1 - alpha - TV."""
    rng = np.random.default_rng(10)
    scorer = RegressionScorer(model=StubRegressor([1.0, 0.0]))
    chol = 0.6 * np.eye(2)
    sigma = chol @ chol.T
    calib_family = AlterationFamily(kind="custom", members=(_dither_member(chol),))
    x_cal = rng.normal(size=(999, 2))
    y_cal = x_cal[:, 0] + rng.normal(size=999)
    x_te = rng.normal(size=(3000, 2))
    y_te = x_te[:, 0] + rng.normal(size=3000)
    pred = calibrate_strategic(x_cal, y_cal, scorer, calib_family, 0.1, 11)
    shift = np.array([0.45, 0.0])
    true_family = AlterationFamily(
        kind="custom",
        members=(lambda x, r: x + shift + chol @ r.standard_normal(2),),
    )
    distance = float(np.sqrt(shift @ np.linalg.inv(sigma) @ shift))
    report = robustness_gap_check(
        pred, x_te, y_te, true_family, tv_bound=gaussian_tv(distance), seed=11
    )
    assert not report.violated


def test_deterministic_mismatch_makes_the_bound_vacuous():
    """Deterministic calibration and true alterations that differ anywhere
    have TV 1, so the bound degenerates below zero and can never bind."""
    rng = np.random.default_rng(12)
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    calib_family = AlterationFamily(kind="custom", members=(lambda x, r: x + 0.1,))
    true_family = AlterationFamily(kind="custom", members=(lambda x, r: x + 0.11,))
    x_cal = rng.normal(size=(500, 1))
    y_cal = x_cal[:, 0] + rng.normal(size=500)
    pred = calibrate_strategic(x_cal, y_cal, scorer, calib_family, 0.1, 13)
    report = robustness_gap_check(
        pred, rng.normal(size=(500, 1)), rng.normal(size=500), true_family,
        tv_bound=1.0, seed=13,
    )
    assert report.bound == pytest.approx(-0.1)
    assert not report.violated


# ---------------------------------------------------------------------------
# Tightness check
# ---------------------------------------------------------------------------


class _LeakyModel:
    """Predicts the true label plus a bounded deterministic perturbation."""

    def __init__(self, w, m_bound, freq=7.3):
        self.w = np.asarray(w, dtype=float)
        self.m = m_bound
        self.freq = freq

    def predict(self, x2d):
        x2d = np.atleast_2d(x2d)
        return x2d @ self.w + self.m * np.sin(self.freq * x2d.sum(axis=1))


def _tightness_setup(m_bound, rng):
    w = np.array([2.0])
    model = _LeakyModel(w, m_bound)
    scorer = RegressionScorer(model=model)
    x_cal = rng.normal(size=(999, 1))
    y_cal = x_cal @ w  # exact labels; all error comes from the perturbation
    x_te = rng.normal(size=(2000, 1))
    return scorer, x_cal, y_cal, x_te


def test_zero_noise_model_yields_singleton_intervals():
    rng = np.random.default_rng(14)
    scorer, x_cal, y_cal, x_te = _tightness_setup(0.0, rng)
    pred = calibrate_strategic(x_cal, y_cal, scorer, identity_family(), 0.1, 15)
    report = tightness_check(pred, x_te, m_bound=0.0)
    assert report.ok and report.mean_length == 0.0


def test_bounded_noise_model_keeps_intervals_under_2m():
    rng = np.random.default_rng(15)
    scorer, x_cal, y_cal, x_te = _tightness_setup(0.5, rng)
    pred = calibrate_strategic(x_cal, y_cal, scorer, identity_family(), 0.1, 16)
    report = tightness_check(pred, x_te, m_bound=0.5)
    assert report.ok
    assert report.mean_length <= 1.0


def test_score_inflating_family_obeys_tv_augmented_bound():
    """With an inflating member the plain 2M limit can break; the limit
    augmented by twice the TV between the threshold order statistics (over
    repeated calibrations) still holds."""
    m_bound = 0.5
    shift = np.array([0.4])
    reps = 60
    t_std, t_strat = np.empty(reps), np.empty(reps)
    family = AlterationFamily(
        kind="custom", members=(lambda v, r: v, lambda v, r: v + shift)
    )
    rng = np.random.default_rng(16)
    for r in range(reps):
        scorer, x_cal, y_cal, x_te = _tightness_setup(m_bound, rng)
        std = calibrate_strategic(x_cal, y_cal, scorer, identity_family(), 0.1, r)
        strat = calibrate_strategic(x_cal, y_cal, scorer, family, 0.1, r)
        t_std[r], t_strat[r] = std.threshold, strat.threshold
    mean_strat_length = 2.0 * t_strat.mean()
    assert mean_strat_length > 2 * m_bound  # the plain limit indeed breaks
    bins = np.histogram_bin_edges(np.concatenate([t_std, t_strat]), bins=30)
    p, _ = np.histogram(t_std, bins=bins, density=False)
    q, _ = np.histogram(t_strat, bins=bins, density=False)
    tv_hat = 0.5 * np.abs(p / reps - q / reps).sum()
    assert mean_strat_length <= 2 * m_bound + 2 * tv_hat + 0.05


# ---------------------------------------------------------------------------
# Training-conditional check
# ---------------------------------------------------------------------------


def _standard_normal_sampler(n, seq):
    y = rng_from(seq).normal(size=n)
    return np.zeros((n, 1)), y


def test_training_conditional_pac_bound_holds():
    scorer = RegressionScorer(model=StubRegressor([0.0]))  # score = |y|
    report = training_conditional_check(
        _standard_normal_sampler,
        scorer,
        identity_family(),
        alpha=0.1,
        delta=0.5,
        repetitions=150,
        n_calib=1000,
        n_test=2000,
        seed=18,
    )
    assert report.ok
    # delta = 0.5, n = 1000: floor is 0.9 - sqrt(log 2 / 2000) ~ 0.8814
    assert report.coverage_floor == pytest.approx(0.8814, abs=5e-5)
    assert report.required_fraction == pytest.approx(
        0.5 - 3 * math.sqrt(0.25 / 150), abs=1e-12
    )


def test_training_conditional_floor_monotone_in_n():
    floors = [
        1 - 0.1 - math.sqrt(math.log(1 / 0.2) / (2 * n)) for n in (100, 1000, 10000)
    ]
    assert floors[0] < floors[1] < floors[2]


# ---------------------------------------------------------------------------
# Convergent alterations
# ---------------------------------------------------------------------------


def test_convergent_simulator_extends_protection_beyond_calibration():
    """With a contracting stochastic step the alterations converge, so a
    large-enough calibration effort keeps coverage near nominal even for far
    larger test-time effort, while a small one degrades."""
    from stratcp.alterations import build_simulator_family
    from stratcp.calibrate import calibrate_standard
    from stratcp.cli import SyntheticSpec, synthetic_rows
    from stratcp.core import calibration_stream, evaluation_stream, prefix_sup_scores
    from stratcp.models import fit_ridge

    spec = SyntheticSpec(d=2, n=3000, kind="regression", noise=1.0, weight_seed=23)
    x, y = synthetic_rows(spec, 44)
    scorer = RegressionScorer(model=fit_ridge(x[:1000], y[:1000], 1e-3))
    x_cal, y_cal = x[1000:1999], y[1000:1999]
    x_te, y_te = x[1999:], y[1999:]

    def contracting(v, rng):
        return 0.5 * v + 0.3 * rng.standard_normal(v.shape[0])

    family = build_simulator_family(contracting, 32)
    cal_prefix = prefix_sup_scores(scorer, family, x_cal, y_cal, calibration_stream(44))
    te_prefix = prefix_sup_scores(scorer, family, x_te, y_te, evaluation_stream(44))
    far = (16, 24, 32)

    t_high = calibrate_standard(cal_prefix[:, 12], 0.1)
    high = [float(np.mean(te_prefix[:, k] <= t_high)) for k in far]
    se3 = 3 * math.sqrt(0.09 / len(y_te))
    assert min(high) >= 0.9 - 0.02 - se3  # near-nominal far beyond calibration
    assert max(high) - min(high) <= 0.03  # and flat

    t_low = calibrate_standard(cal_prefix[:, 2], 0.1)
    low = [float(np.mean(te_prefix[:, k] <= t_low)) for k in far]
    assert min(low) < min(high) - 0.05  # small calibration effort degrades


# ---------------------------------------------------------------------------
# Combined report
# ---------------------------------------------------------------------------


def test_evaluate_predictors_reports_consistent_statistics():
    rng = np.random.default_rng(19)
    scorer = RegressionScorer(model=StubRegressor([1.0]))
    noisy = lambda v, r: v + 0.4 * r.normal(size=v.shape)
    family = AlterationFamily(kind="custom", members=(lambda v, r: v, noisy))
    x_cal = rng.normal(size=(400, 1))
    y_cal = x_cal[:, 0] + rng.normal(size=400)
    x_te = rng.normal(size=(500, 1))
    y_te = x_te[:, 0] + rng.normal(size=500)
    strat = calibrate_strategic(x_cal, y_cal, scorer, family, 0.1, 20)
    std = calibrate_strategic(x_cal, y_cal, scorer, identity_family(), 0.1, 20)
    report = evaluate_predictors(strat, std, x_te, y_te, family=family, seed=20)
    assert report.n_test == 500
    assert 0.0 <= report.strategic_coverage <= report.plain_coverage <= 1.0
    assert report.avg_size_diff == pytest.approx(2 * (strat.threshold - std.threshold))
    for stat, (lo, hi) in report.ci95.items():
        assert lo <= getattr(report, stat) <= hi
    payload = report.as_dict()
    assert set(payload["ci95"]) == {
        "strategic_coverage", "plain_coverage", "avg_set_size", "avg_size_diff",
    }
