"""Shared builders for small, fully deterministic test problems."""

import numpy as np
import pytest

from stratcp.cli import SyntheticSpec, generate_synthetic
from stratcp.core import ClassificationScorer, RegressionScorer
from stratcp.models import fit_logistic, fit_ridge

# One line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class StubRegressor:
    """Regression model computing a fixed linear map; no fitting involved."""

    def __init__(self, w, b=0.0):
        self.w = np.asarray(w, dtype=float)
        self.b = b

    def predict(self, x2d):
        return np.atleast_2d(x2d) @ self.w + self.b


class StubClassifier:
    """Classifier returning logistic-style probabilities from fixed logits."""

    def __init__(self, weight_matrix):
        self.weight_matrix = np.asarray(weight_matrix, dtype=float)

    def predict_proba(self, x2d):
        z = np.atleast_2d(x2d) @ self.weight_matrix.T
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def regression_pipeline():
    """Fitted ridge scorer over a 3-D linear synthetic dataset."""
    spec = SyntheticSpec(d=3, n=1200, kind="regression", noise=0.5, weight_seed=5)
    ds = generate_synthetic(spec, seed=101)
    model = fit_ridge(ds.x_train, ds.y_train, 1e-3)
    return ds, RegressionScorer(model=model)


@pytest.fixture(scope="session")
def classification_pipeline():
    """Fitted logistic scorer over a 3-class synthetic dataset."""
    spec = SyntheticSpec(
        d=4, n=1500, kind="classification", n_classes=3, weight_seed=9, weight_scale=1.5
    )
    ds = generate_synthetic(spec, seed=202)
    model = fit_logistic(ds.x_train, ds.y_train, 3)
    return ds, ClassificationScorer(model=model, n_classes=3)
