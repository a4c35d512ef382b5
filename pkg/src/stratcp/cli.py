"""Data ingestion, synthetic generation, and experiment runners.

Subcommands
-----------
gen          write a synthetic dataset to CSV
calibrate    fit, calibrate, and dump thresholds + model weights as JSON
evaluate     full pipeline: coverage/size report for strategic and standard
             calibration under the configured alteration family
sweep-alpha  coverage and set sizes across a grid of significance levels
sweep-kmax   coverage matrix over calibration-time vs test-time trajectory
             lengths for the iterative-search family
table        {plain, strategic model} x {utility-cost, iter-search} grid with
             coverage and size-difference columns
misspec      coverage of one calibrated predictor under increasingly noisy
             versions of its own alteration family

Every runner is a pure function of its flags: all randomness is derived from
``--seed`` and output files are bitwise reproducible.  CSV columns are
documented in the README; JSON reports embed the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .alterations import (
    MahalanobisCost,
    RationalUtility,
    SearchConfig,
    build_iterative_family,
    build_simulator_family,
    build_utility_cost_family,
    iterative_search_step,
    misspecify,
    proposal_chol,
    regularized_covariance,
    utility_cost_alteration,
)
from .calibrate import (
    CalibratedPredictor,
    calibrate_group_conditional,
    calibrate_label_conditional,
    calibrate_standard,
    calibrate_strategic,
)
from .core import (
    AlterationFamily,
    ClassificationScorer,
    RegressionScorer,
    SplitDataset,
    Task,
    as_seed_sequence,
    calibration_stream,
    data_stream,
    evaluation_stream,
    identity_family,
    prefix_sup_scores,
    rng_from,
    substream,
    sup_scores,
)
from .metrics import bootstrap_ci, coverage_indicators, evaluate_predictors, set_sizes
from .models import fit_logistic, fit_ridge, repeated_risk_minimization

__all__ = [
    "ExperimentConfig",
    "SyntheticSpec",
    "generate_synthetic",
    "ingest_csv",
    "main",
    "run_alpha_sweep",
    "run_kmax_sweep",
    "run_misspec_sweep",
    "run_table",
    "save_csv",
    "split_rows",
    "synthetic_rows",
]

DEFAULT_FRACTIONS = (0.4, 0.3, 0.3)
DEFAULT_RIDGE = 1e-3

# Sub-keys under the data stream: raw draws vs the shuffle used to split.
_ROWS_KEY = 0
_SHUFFLE_KEY = 1


# ---------------------------------------------------------------------------
# Synthetic data and CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-covariate generator with a linear or softmax-linear label."""

    d: int
    n: int
    kind: str  # "regression" | "classification"
    n_classes: int = 2
    noise: float = 1.0  # label noise sd (regression only)
    weight_seed: int = 0
    weight_scale: float = 1.0

    def __post_init__(self):
        if self.n < 30:
            raise ValueError("need at least 30 rows")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown generator kind: {self.kind}")

    @property
    def task(self) -> Task:
        if self.kind == "classification":
            return Task.classification(self.n_classes)
        return Task.regression()


def synthetic_rows(spec: SyntheticSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """Raw (covariates, labels) before shuffling and splitting.

    Model weights come from the weight seed, data from the main seed, so the
    same population can be re-sampled independently of its parameters.
    """
    rng = rng_from(substream(data_stream(seed), _ROWS_KEY))
    wrng = rng_from(as_seed_sequence(spec.weight_seed))
    x = rng.standard_normal((spec.n, spec.d))
    if spec.kind == "regression":
        w = spec.weight_scale * wrng.standard_normal(spec.d)
        y = x @ w + spec.noise * rng.standard_normal(spec.n)
        return x, y
    w = spec.weight_scale * wrng.standard_normal((spec.n_classes, spec.d))
    logits = x @ w.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(spec.n)
    y = (u[:, None] > p.cumsum(axis=1)).sum(axis=1)
    return x, np.minimum(y, spec.n_classes - 1).astype(float)


def split_rows(
    x: np.ndarray,
    y: np.ndarray,
    task: Task,
    seed,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    label_names: Optional[tuple[str, ...]] = None,
    feature_names: Optional[tuple[str, ...]] = None,
) -> SplitDataset:
    """Deterministic shuffle by seed, then split by the given fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive and sum to 1")
    n = x.shape[0]
    order = rng_from(substream(data_stream(seed), _SHUFFLE_KEY)).permutation(n)
    x, y = x[order], y[order]
    n_train = int(round(fractions[0] * n))
    n_calib = int(round(fractions[1] * n))
    if task.is_classification:
        y = y.astype(int)
    return SplitDataset(
        x_train=x[:n_train],
        y_train=y[:n_train],
        x_calib=x[n_train : n_train + n_calib],
        y_calib=y[n_train : n_train + n_calib],
        x_test=x[n_train + n_calib :],
        y_test=y[n_train + n_calib :],
        task=task,
        label_names=label_names,
        feature_names=feature_names,
    )


def generate_synthetic(
    spec: SyntheticSpec, seed, fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
) -> SplitDataset:
    x, y = synthetic_rows(spec, seed)
    label_names = None
    if spec.kind == "classification":
        label_names = tuple(str(k) for k in range(spec.n_classes))
    feature_names = tuple(f"x{j}" for j in range(spec.d))
    return split_rows(x, y, spec.task, seed, fractions, label_names, feature_names)


def save_csv(
    path,
    x: np.ndarray,
    y: np.ndarray,
    task: Task,
    label_names: Optional[tuple[str, ...]] = None,
    feature_names: Optional[tuple[str, ...]] = None,
    label_column: str = "label",
) -> None:
    """Write rows with full-precision floats so ingestion round-trips bitwise."""
    d = x.shape[1]
    names = feature_names or tuple(f"x{j}" for j in range(d))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + [label_column])
        for i in range(x.shape[0]):
            if task.is_classification:
                label = label_names[int(y[i])] if label_names else str(int(y[i]))
            else:
                label = repr(float(y[i]))
            writer.writerow([repr(float(v)) for v in x[i]] + [label])


def _sorted_label_names(names: set[str]):
    # Numeric labels sort numerically so "10" lands after "2".
    try:
        return sorted(names, key=lambda s: (0, float(s), s))
    except ValueError:
        return sorted(names)


def ingest_csv(
    path,
    label_column: str,
    task_kind: str,
    seed,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> SplitDataset:
    """Parse a headered CSV into a shuffled, split dataset.

    Every feature cell must parse as a finite real; failures are reported
    with their row and column.  Categorical labels are mapped to indices by
    sorted label name.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        feature_names = tuple(name for j, name in enumerate(header) if j != label_idx)
        rows, labels = [], []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            feats = []
            for j, cell in enumerate(row):
                if j == label_idx:
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: row {i}, column {header[j]!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise ValueError(f"{path}: row {i}, column {header[j]!r}: non-finite value")
                feats.append(value)
            rows.append(feats)
            labels.append(row[label_idx])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=float)
    if task_kind == "regression":
        y = np.empty(len(labels))
        for i, cell in enumerate(labels):
            try:
                y[i] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: row {i}, column {label_column!r}: cannot parse {cell!r}"
                ) from None
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise ValueError(f"{path}: row {bad}, column {label_column!r}: non-finite label")
        return split_rows(x, y, Task.regression(), seed, fractions, None, feature_names)
    names = _sorted_label_names(set(labels))
    index = {name: k for k, name in enumerate(names)}
    y = np.array([index[cell] for cell in labels], dtype=float)
    task = Task.classification(len(names))
    return split_rows(x, y, task, seed, fractions, tuple(names), feature_names)


# ---------------------------------------------------------------------------
# Experiment configuration and pipeline assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    alpha: float = 0.1
    alpha_grid: tuple[float, ...] = ()
    family: str = "identity"  # identity | utility-cost | iter-search | simulator
    search: SearchConfig = field(default_factory=SearchConfig)
    model: str = "plain"  # plain | strategic
    rrm_rounds: int = 10
    data_path: Optional[str] = None
    label_column: str = "label"
    task_kind: str = "regression"
    synthetic: Optional[SyntheticSpec] = None
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    omega: Optional[str] = None
    utility_farthest_end: bool = False
    mode: str = "marginal"  # marginal | group | label
    group_column: Optional[str] = None
    bootstrap_b: int = 1000
    ridge: float = DEFAULT_RIDGE
    out_dir: str = "."

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if any(not 0 < a < 1 for a in self.alpha_grid):
            raise ValueError("alpha grid entries must be in (0, 1)")
        if abs(sum(self.fractions) - 1.0) > 1e-9 or any(f <= 0 for f in self.fractions):
            raise ValueError("fractions must be positive and sum to 1")
        if self.data_path is None and self.synthetic is None:
            raise ValueError("need a CSV path or a synthetic spec")


def load_dataset(cfg: ExperimentConfig) -> SplitDataset:
    if cfg.data_path is not None:
        return ingest_csv(cfg.data_path, cfg.label_column, cfg.task_kind, cfg.seed, cfg.fractions)
    return generate_synthetic(cfg.synthetic, cfg.seed, cfg.fractions)


def _make_scorer(model, task: Task):
    if task.is_classification:
        return ClassificationScorer(model=model, n_classes=task.n_classes)
    return RegressionScorer(model=model)


def parse_omega(spec: str, task: Task, label_names: Optional[tuple[str, ...]]):
    """``a..b`` interval for regression; comma-separated class names otherwise."""
    if task.is_classification:
        members = set()
        for token in spec.split(","):
            token = token.strip()
            if label_names and token in label_names:
                members.add(label_names.index(token))
            else:
                try:
                    members.add(int(token))
                except ValueError:
                    raise ValueError(f"unknown class name: {token!r}") from None
        return frozenset(members)
    lo_s, _, hi_s = spec.partition("..")
    if not _:
        raise ValueError(f"regression omega must look like 'a..b', got {spec!r}")
    return (float(lo_s), float(hi_s))


def _omega_for(cfg: ExperimentConfig, dataset: SplitDataset):
    if cfg.omega is None:
        raise ValueError(f"the {cfg.family} family needs --omega")
    return parse_omega(cfg.omega, dataset.task, dataset.label_names)


def _gaussian_walk_step(chol: np.ndarray):
    # Stand-in stochastic simulator: an undirected Gaussian random walk.
    def step(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return x + chol @ rng.standard_normal(x.shape[0])

    return step


def build_family(
    cfg: ExperimentConfig, scorer, sigma: np.ndarray, dataset: SplitDataset
) -> AlterationFamily:
    if cfg.family == "identity":
        return identity_family()
    if cfg.family == "simulator":
        return build_simulator_family(
            _gaussian_walk_step(proposal_chol(sigma, cfg.search.step_scale)), cfg.search.k_max
        )
    utility = RationalUtility(
        scorer, _omega_for(cfg, dataset), farthest_end=cfg.utility_farthest_end
    )
    if cfg.family == "utility-cost":
        cost = MahalanobisCost.from_covariance(sigma)
        return build_utility_cost_family(utility, cost, cfg.search, sigma)
    if cfg.family == "iter-search":
        return build_iterative_family(utility, cfg.search, sigma)
    raise ValueError(f"unknown family kind: {cfg.family}")


def _most_effortful_alteration(cfg: ExperimentConfig, scorer, sigma, dataset):
    """The single highest-effort member, used as the RRM best response."""
    if cfg.family == "identity":
        return lambda x, rng: x
    chol = proposal_chol(sigma, cfg.search.step_scale)
    if cfg.family == "simulator":
        walk = _gaussian_walk_step(chol)

        def simulate(x, rng):
            for _ in range(cfg.search.k_max):
                x = walk(x, rng)
            return x

        return simulate
    utility = RationalUtility(
        scorer, _omega_for(cfg, dataset), farthest_end=cfg.utility_farthest_end
    )
    if cfg.family == "utility-cost":
        cost = MahalanobisCost.from_covariance(sigma)
        lam = max(cfg.search.lambda_grid)

        def rational(x, rng):
            return utility_cost_alteration(utility, cost, lam, cfg.search, chol, x, rng)

        return rational

    def climb(x, rng):
        for _ in range(cfg.search.k_max):
            x = iterative_search_step(utility, cfg.search, chol, x, rng)
        return x

    return climb


def fit_base_model(cfg: ExperimentConfig, dataset: SplitDataset):
    task = dataset.task

    def plain_fit(x, y):
        if task.is_classification:
            return fit_logistic(x, y, task.n_classes)
        return fit_ridge(x, y, cfg.ridge)

    if cfg.model == "plain":
        return plain_fit(dataset.x_train, dataset.y_train)
    if cfg.model != "strategic":
        raise ValueError(f"unknown model kind: {cfg.model}")
    sigma = regularized_covariance(dataset.x_train)

    def builder(model):
        return _most_effortful_alteration(cfg, _make_scorer(model, task), sigma, dataset)

    return repeated_risk_minimization(
        dataset.x_train, dataset.y_train, plain_fit, builder, cfg.rrm_rounds, cfg.seed
    )


@dataclass(eq=False)
class Pipeline:
    dataset: SplitDataset
    scorer: object
    sigma: np.ndarray
    family: AlterationFamily


def build_pipeline(cfg: ExperimentConfig) -> Pipeline:
    dataset = load_dataset(cfg)
    scorer = _make_scorer(fit_base_model(cfg, dataset), dataset.task)
    sigma = regularized_covariance(dataset.x_calib)
    family = build_family(cfg, scorer, sigma, dataset)
    return Pipeline(dataset=dataset, scorer=scorer, sigma=sigma, family=family)


def parse_groups(spec: str, dataset: SplitDataset):
    """Group predicates from a spec string.

    ``sign:<feature>`` splits on the sign of one feature; a bare feature name
    makes one group per distinct value of that (discrete) feature observed in
    the calibration split.
    """
    names = dataset.feature_names or tuple(f"x{j}" for j in range(dataset.d))
    if spec.startswith("sign:"):
        feature = spec[len("sign:") :]
        if feature not in names:
            raise ValueError(f"unknown feature: {feature!r}")
        j = names.index(feature)
        return [lambda x2d, j=j: x2d[:, j] >= 0, lambda x2d, j=j: x2d[:, j] < 0]
    if spec not in names:
        raise ValueError(f"unknown feature: {spec!r}")
    j = names.index(spec)
    values = np.unique(dataset.x_calib[:, j])
    return [lambda x2d, j=j, v=v: x2d[:, j] == v for v in values]


def calibrate_predictor(
    cfg: ExperimentConfig, pipe: Pipeline, family: AlterationFamily, alpha: float
) -> CalibratedPredictor:
    ds = pipe.dataset
    if cfg.mode == "marginal":
        return calibrate_strategic(ds.x_calib, ds.y_calib, pipe.scorer, family, alpha, cfg.seed)
    if cfg.mode == "group":
        if cfg.group_column is None:
            raise ValueError("group mode needs --group-col")
        groups = parse_groups(cfg.group_column, ds)
        return calibrate_group_conditional(
            ds.x_calib, ds.y_calib, pipe.scorer, family, alpha, groups, cfg.seed
        )
    if cfg.mode == "label":
        return calibrate_label_conditional(
            ds.x_calib, ds.y_calib, pipe.scorer, family, alpha, cfg.seed
        )
    raise ValueError(f"unknown mode: {cfg.mode}")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["fractions"] = list(cfg.fractions)
    out["alpha_grid"] = list(cfg.alpha_grid)
    return out


def _model_weights(scorer) -> dict:
    if isinstance(scorer, ClassificationScorer):
        return {"kind": "logistic", "weights": scorer.model.weights.tolist()}
    return {
        "kind": "ridge",
        "weights": scorer.model.weights.tolist(),
        "ridge": scorer.model.ridge,
    }


def _out_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def run_calibrate(cfg: ExperimentConfig) -> Path:
    """Calibrate once and dump thresholds plus model weights."""
    pipe = build_pipeline(cfg)
    pred = calibrate_predictor(cfg, pipe, pipe.family, cfg.alpha)
    payload = {
        "config": _config_dict(cfg),
        "model": _model_weights(pipe.scorer),
        "mode": pred.mode,
        "alpha": pred.alpha,
        "n_calib": pred.n_calib,
        "family_size": len(pipe.family),
    }
    if pred.mode == "marginal":
        payload["threshold"] = _json_safe(pred.threshold)
    elif pred.mode == "group":
        payload["group_thresholds"] = [_json_safe(t) for t in pred.group_thresholds.tolist()]
    else:
        payload["label_thresholds"] = [_json_safe(t) for t in pred.label_thresholds.tolist()]
    path = _out_dir(cfg) / "calibration.json"
    _write_json(path, payload)
    return path


def run_evaluate(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Report strategic and standard calibration under the same alterations."""
    pipe = build_pipeline(cfg)
    ds = pipe.dataset
    strategic = calibrate_predictor(cfg, pipe, pipe.family, cfg.alpha)
    standard = calibrate_predictor(cfg, pipe, identity_family(), cfg.alpha)
    rows, reports = [], {}
    for method, pred in (("strategic", strategic), ("standard", standard)):
        report = evaluate_predictors(
            pred,
            standard,
            ds.x_test,
            ds.y_test,
            family=pipe.family,
            seed=cfg.seed,
            bootstrap_b=cfg.bootstrap_b,
            label_range=ds.label_range,
        )
        reports[method] = report.as_dict()
        rows.append(
            [
                method,
                cfg.alpha,
                report.strategic_coverage,
                report.ci95["strategic_coverage"][0],
                report.ci95["strategic_coverage"][1],
                report.plain_coverage,
                report.avg_set_size,
                report.ci95["avg_set_size"][0],
                report.ci95["avg_set_size"][1],
                report.avg_size_diff,
            ]
        )
    out = _out_dir(cfg)
    csv_path = out / "evaluate.csv"
    _write_csv(
        csv_path,
        [
            "method",
            "alpha",
            "strategic_coverage",
            "strategic_coverage_lo",
            "strategic_coverage_hi",
            "plain_coverage",
            "avg_set_size",
            "avg_set_size_lo",
            "avg_set_size_hi",
            "avg_size_diff",
        ],
        rows,
    )
    json_path = out / "evaluate.json"
    _write_json(json_path, {"config": _config_dict(cfg), "reports": reports})
    return csv_path, json_path


def run_alpha_sweep(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Coverage and average set size for both methods across an alpha grid.

    Sup-scores are computed once per family; only thresholds vary with
    alpha, so the sweep costs a single pass over the data.
    """
    grid = cfg.alpha_grid or (cfg.alpha,)
    pipe = build_pipeline(cfg)
    ds = pipe.dataset
    cal_strat = sup_scores(
        pipe.scorer, pipe.family, ds.x_calib, ds.y_calib, calibration_stream(cfg.seed)
    )
    cal_plain = pipe.scorer.score_batch(ds.x_calib, ds.y_calib)
    test_strat = sup_scores(
        pipe.scorer, pipe.family, ds.x_test, ds.y_test, evaluation_stream(cfg.seed)
    )
    if isinstance(pipe.scorer, ClassificationScorer):
        class_scores = 1.0 - pipe.scorer.probabilities(ds.x_test)
    rows = []
    for alpha in grid:
        for method, cal_scores in (("strategic", cal_strat), ("standard", cal_plain)):
            t = calibrate_standard(cal_scores, alpha)
            covered = (test_strat <= t).astype(float)
            if isinstance(pipe.scorer, ClassificationScorer):
                sizes = (class_scores <= t).sum(axis=1).astype(float)
            elif math.isinf(t):
                lo, hi = ds.label_range
                sizes = np.full(ds.x_test.shape[0], hi - lo)
            else:
                sizes = np.full(ds.x_test.shape[0], 2.0 * t)
            boot = substream(as_seed_sequence(cfg.seed), 20, len(rows))
            cov_ci = bootstrap_ci(covered, cfg.bootstrap_b, seed=substream(boot, 0))
            size_ci = bootstrap_ci(sizes, cfg.bootstrap_b, seed=substream(boot, 1))
            rows.append(
                [
                    alpha,
                    method,
                    float(covered.mean()),
                    cov_ci[0],
                    cov_ci[1],
                    float(sizes.mean()),
                    size_ci[0],
                    size_ci[1],
                    t,
                ]
            )
    out = _out_dir(cfg)
    csv_path = out / "alpha_sweep.csv"
    _write_csv(
        csv_path,
        [
            "alpha",
            "method",
            "strategic_coverage",
            "strategic_coverage_lo",
            "strategic_coverage_hi",
            "avg_set_size",
            "avg_set_size_lo",
            "avg_set_size_hi",
            "threshold",
        ],
        rows,
    )
    json_path = out / "alpha_sweep.json"
    _write_json(
        json_path,
        {
            "config": _config_dict(cfg),
            "rows": [
                dict(
                    zip(
                        [
                            "alpha",
                            "method",
                            "strategic_coverage",
                            "lo",
                            "hi",
                            "avg_set_size",
                            "size_lo",
                            "size_hi",
                            "threshold",
                        ],
                        [_json_safe(v) for v in row],
                    )
                )
                for row in rows
            ],
        },
    )
    return csv_path, json_path


def run_kmax_sweep(
    cfg: ExperimentConfig, k_cal_list: Sequence[int], k_test_list: Sequence[int]
) -> Path:
    """Coverage matrix over calibration-time vs test-time trajectory length.

    One rollout per point at the largest k serves every cell, because member
    k of a trajectory family is a prefix of member k' > k under the same
    seeds.
    """
    if not k_cal_list or not k_test_list:
        raise ValueError("k lists must be nonempty")
    k_top = max(max(k_cal_list), max(k_test_list))
    cfg_top = replace(cfg, family="iter-search", search=replace(cfg.search, k_max=k_top))
    pipe = build_pipeline(cfg_top)
    ds = pipe.dataset
    cal_prefix = prefix_sup_scores(
        pipe.scorer, pipe.family, ds.x_calib, ds.y_calib, calibration_stream(cfg.seed)
    )
    test_prefix = prefix_sup_scores(
        pipe.scorer, pipe.family, ds.x_test, ds.y_test, evaluation_stream(cfg.seed)
    )
    rows = []
    for k_cal in k_cal_list:
        t = calibrate_standard(cal_prefix[:, k_cal], cfg.alpha)
        for k_test in k_test_list:
            covered = (test_prefix[:, k_test] <= t).astype(float)
            ci = bootstrap_ci(
                covered,
                cfg.bootstrap_b,
                seed=substream(as_seed_sequence(cfg.seed), 21, k_cal, k_test),
            )
            rows.append([k_cal, k_test, float(covered.mean()), ci[0], ci[1], t])
    path = _out_dir(cfg) / "kmax_sweep.csv"
    _write_csv(
        path,
        ["k_cal", "k_test", "coverage", "coverage_lo", "coverage_hi", "threshold"],
        rows,
    )
    return path


def run_table(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Model x family grid of strategic coverage and size differences.

    Cells where standard calibration lands more than 30 percentage points
    below the nominal level are flagged.
    """
    rows = []
    for model in ("plain", "strategic"):
        for family_kind in ("utility-cost", "iter-search"):
            cell_cfg = replace(cfg, model=model, family=family_kind)
            pipe = build_pipeline(cell_cfg)
            ds = pipe.dataset
            strategic = calibrate_predictor(cell_cfg, pipe, pipe.family, cfg.alpha)
            standard = calibrate_predictor(cell_cfg, pipe, identity_family(), cfg.alpha)
            ours = coverage_indicators(
                strategic, ds.x_test, ds.y_test, pipe.family, cfg.seed
            ).astype(float)
            std = coverage_indicators(
                standard, ds.x_test, ds.y_test, pipe.family, cfg.seed
            ).astype(float)
            diffs = set_sizes(strategic, ds.x_test, ds.label_range) - set_sizes(
                standard, ds.x_test, ds.label_range
            )
            boot = substream(as_seed_sequence(cfg.seed), 22, len(rows))
            ours_ci = bootstrap_ci(ours, cfg.bootstrap_b, seed=substream(boot, 0))
            std_ci = bootstrap_ci(std, cfg.bootstrap_b, seed=substream(boot, 1))
            diff_ci = bootstrap_ci(diffs, cfg.bootstrap_b, seed=substream(boot, 2))
            flagged = float(std.mean()) < (1.0 - cfg.alpha) - 0.30
            rows.append(
                [
                    model,
                    family_kind,
                    float(ours.mean()),
                    ours_ci[0],
                    ours_ci[1],
                    float(std.mean()),
                    std_ci[0],
                    std_ci[1],
                    float(diffs.mean()),
                    diff_ci[0],
                    diff_ci[1],
                    flagged,
                ]
            )
    out = _out_dir(cfg)
    csv_path = out / "table.csv"
    header = [
        "model",
        "family",
        "coverage_ours",
        "coverage_ours_lo",
        "coverage_ours_hi",
        "coverage_std",
        "coverage_std_lo",
        "coverage_std_hi",
        "avg_size_diff",
        "avg_size_diff_lo",
        "avg_size_diff_hi",
        "std_flagged",
    ]
    _write_csv(csv_path, header, rows)
    json_path = out / "table.json"
    _write_json(
        json_path,
        {"config": _config_dict(cfg), "rows": [dict(zip(header, row)) for row in rows]},
    )
    return csv_path, json_path


def run_misspec_sweep(
    cfg: ExperimentConfig,
    noise_grid: Sequence[float],
    tv_bounds: Optional[Sequence[Optional[float]]] = None,
) -> Path:
    """Coverage of one calibrated predictor as its family gains output noise.

    The misspecification lower bound 1 - alpha - TV is emitted when the
    caller can supply the total-variation terms (they have a closed form
    only for Gaussian mean shifts); the zero-noise row always has bound
    1 - alpha.
    """
    if any(lam < 0 for lam in noise_grid):
        raise ValueError("noise grid entries must be >= 0")
    if tv_bounds is not None and len(tv_bounds) != len(noise_grid):
        raise ValueError("tv_bounds must match the noise grid")
    pipe = build_pipeline(cfg)
    ds = pipe.dataset
    pred = calibrate_predictor(cfg, pipe, pipe.family, cfg.alpha)
    rows = []
    for idx, lam in enumerate(noise_grid):
        true_family = misspecify(pipe.family, lam, pipe.sigma)
        covered = coverage_indicators(pred, ds.x_test, ds.y_test, true_family, cfg.seed).astype(
            float
        )
        ci = bootstrap_ci(
            covered, cfg.bootstrap_b, seed=substream(as_seed_sequence(cfg.seed), 23, idx)
        )
        if tv_bounds is not None and tv_bounds[idx] is not None:
            bound = 1.0 - cfg.alpha - tv_bounds[idx]
        elif lam == 0.0:
            bound = 1.0 - cfg.alpha
        else:
            bound = ""
        rows.append([lam, float(covered.mean()), ci[0], ci[1], bound])
    path = _out_dir(cfg) / "misspec_sweep.csv"
    _write_csv(
        path,
        ["lambda_noise", "coverage", "coverage_lo", "coverage_hi", "prop2_bound"],
        rows,
    )
    return path


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV dataset with a header row")
    p.add_argument("--label-col", default="label", help="label column name")
    p.add_argument("--task", choices=["reg", "cls"], default="reg")
    p.add_argument("--synthetic-d", type=int, help="synthetic dimension")
    p.add_argument("--synthetic-n", type=int, help="synthetic row count")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--weight-seed", type=int, default=0)
    p.add_argument("--weight-scale", type=float, default=1.0)
    p.add_argument("--fractions", default="0.4,0.3,0.3", help="train,calib,test")


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    _add_data_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument(
        "--family",
        choices=["utility-cost", "iter-search", "simulator", "identity"],
        default="identity",
    )
    p.add_argument("--kmax", type=int, default=3)
    p.add_argument("--lambda-grid", default="1e-7,1,5")
    p.add_argument("--m-per-step", type=int, default=2)
    p.add_argument("--step-scale", type=float, default=0.2)
    p.add_argument("--candidates", type=int, default=500)
    p.add_argument("--omega", help="'a..b' (regression) or class names (classification)")
    p.add_argument(
        "--omega-farthest-end",
        action="store_true",
        help="regression utility targets the far end of omega instead of the near one",
    )
    p.add_argument("--mode", choices=["marginal", "group", "label"], default="marginal")
    p.add_argument("--group-col", help="feature name or 'sign:<feature>'")
    p.add_argument("--model", choices=["plain", "strategic"], default="plain")
    p.add_argument("--rrm-rounds", type=int, default=10)
    p.add_argument("--bootstrap-b", type=int, default=1000)
    p.add_argument("--out", default=".", help="output directory")


def _synthetic_from(args) -> Optional[SyntheticSpec]:
    if args.synthetic_d is None and args.synthetic_n is None:
        return None
    if args.synthetic_d is None or args.synthetic_n is None:
        raise SystemExit("--synthetic-d and --synthetic-n go together")
    kind = "classification" if args.task == "cls" else "regression"
    return SyntheticSpec(
        d=args.synthetic_d,
        n=args.synthetic_n,
        kind=kind,
        n_classes=args.classes,
        noise=args.noise,
        weight_seed=args.weight_seed,
        weight_scale=args.weight_scale,
    )


def _config_from(args) -> ExperimentConfig:
    fractions = _parse_floats(args.fractions)
    if len(fractions) != 3:
        raise SystemExit("--fractions needs three comma-separated numbers")
    search = SearchConfig(
        candidates_per_step=args.m_per_step,
        step_scale=args.step_scale,
        k_max=args.kmax,
        candidate_count=args.candidates,
        lambda_grid=_parse_floats(args.lambda_grid),
    )
    return ExperimentConfig(
        seed=args.seed,
        alpha=args.alpha,
        alpha_grid=_parse_floats(args.alpha_grid) if getattr(args, "alpha_grid", None) else (),
        family=args.family,
        search=search,
        model=args.model,
        rrm_rounds=args.rrm_rounds,
        data_path=args.data,
        label_column=args.label_col,
        task_kind="classification" if args.task == "cls" else "regression",
        synthetic=_synthetic_from(args),
        fractions=fractions,
        omega=args.omega,
        utility_farthest_end=args.omega_farthest_end,
        mode=args.mode,
        group_column=args.group_col,
        bootstrap_b=args.bootstrap_b,
        out_dir=args.out,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="stratcp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="write a synthetic dataset to CSV")
    p_gen.add_argument("--task", choices=["reg", "cls"], default="reg")
    p_gen.add_argument("--synthetic-d", type=int, required=True)
    p_gen.add_argument("--synthetic-n", type=int, required=True)
    p_gen.add_argument("--classes", type=int, default=2)
    p_gen.add_argument("--noise", type=float, default=1.0)
    p_gen.add_argument("--weight-seed", type=int, default=0)
    p_gen.add_argument("--weight-scale", type=float, default=1.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output CSV path")

    p_cal = sub.add_parser("calibrate", help="calibrate and dump thresholds")
    _add_pipeline_args(p_cal)

    p_eval = sub.add_parser("evaluate", help="full coverage/size report")
    _add_pipeline_args(p_eval)

    p_alpha = sub.add_parser("sweep-alpha", help="sweep significance levels")
    _add_pipeline_args(p_alpha)
    p_alpha.add_argument("--alpha-grid", required=True, help="comma-separated alphas")

    p_kmax = sub.add_parser("sweep-kmax", help="calibration vs test trajectory length")
    _add_pipeline_args(p_kmax)
    p_kmax.add_argument("--kcal-list", required=True, help="comma-separated k values")
    p_kmax.add_argument("--ktest-list", required=True, help="comma-separated k values")

    p_table = sub.add_parser("table", help="model x family summary table")
    _add_pipeline_args(p_table)

    p_mis = sub.add_parser("misspec", help="coverage under noisy alterations")
    _add_pipeline_args(p_mis)
    p_mis.add_argument("--noise-grid", required=True, help="comma-separated noise scales")

    args = parser.parse_args(argv)

    if args.command == "gen":
        kind = "classification" if args.task == "cls" else "regression"
        spec = SyntheticSpec(
            d=args.synthetic_d,
            n=args.synthetic_n,
            kind=kind,
            n_classes=args.classes,
            noise=args.noise,
            weight_seed=args.weight_seed,
            weight_scale=args.weight_scale,
        )
        x, y = synthetic_rows(spec, args.seed)
        label_names = (
            tuple(str(k) for k in range(spec.n_classes)) if kind == "classification" else None
        )
        save_csv(args.out, x, y, spec.task, label_names)
        print(f"wrote {args.out}")
        return 0

    cfg = _config_from(args)
    if args.command == "calibrate":
        path = run_calibrate(cfg)
        print(f"wrote {path}")
    elif args.command == "evaluate":
        for path in run_evaluate(cfg):
            print(f"wrote {path}")
    elif args.command == "sweep-alpha":
        for path in run_alpha_sweep(cfg):
            print(f"wrote {path}")
    elif args.command == "sweep-kmax":
        path = run_kmax_sweep(cfg, _parse_ints(args.kcal_list), _parse_ints(args.ktest_list))
        print(f"wrote {path}")
    elif args.command == "table":
        for path in run_table(cfg):
            print(f"wrote {path}")
    elif args.command == "misspec":
        path = run_misspec_sweep(cfg, _parse_floats(args.noise_grid))
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
