import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lpsvdd.data import Dataset  # noqa: E402
from lpsvdd.model import score  # noqa: E402

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def iris_path():
    return DATA_DIR / "iris_virginica.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def two_blobs(seed, n_pos=60, n_neg=60, gap=4.0):
    """Separable 2-D fixture: target blob at the origin, novel blob offset by ``gap``."""
    r = np.random.default_rng(seed)
    pos = r.normal(0.0, 1.0, size=(n_pos, 2))
    neg = r.normal(0.0, 1.0, size=(n_neg, 2)) + [gap, gap]
    return Dataset(np.vstack([pos, neg]), np.r_[np.ones(n_pos), -np.ones(n_neg)])


def fit_certificate(model, report, train):
    """Optimality diagnostics of a fit on ``train`` (raw features).

    Returns a dict of the quantities the KKT / duality checks bound.
    """
    sol = report.dual
    y = train.labels.astype(float)
    alpha = sol.alpha
    f = score(model, train.features)
    sv = alpha > model.support_epsilon
    comp = np.abs(f[sv] - model.squared_radius - y[sv] * report.slacks[sv])
    # primal feasibility of the recovered (R^2, zeta)
    viol_pos = np.max(f[y == 1] - model.squared_radius - report.slacks[y == 1], initial=-np.inf)
    viol_neg = np.max(model.squared_radius - report.slacks[y == -1] - f[y == -1], initial=-np.inf)
    return {
        "kkt": sol.kkt_residual,
        "min_alpha": float(alpha.min()),
        "eq": abs(float(y @ alpha) - 1.0),
        "gap": report.relative_gap,
        "complementarity": float(comp.max()),
        "primal_violation": max(viol_pos, viol_neg),
        "weight_sum": float(model.weights.sum()),
    }


def assert_certificate(model, report, train):
    c = fit_certificate(model, report, train)
    assert report.dual.converged
    assert c["kkt"] < 1e-6
    assert c["min_alpha"] >= 0.0
    assert c["eq"] <= 1e-10
    assert abs(c["gap"]) < 1e-5
    assert c["complementarity"] < 1e-4
    assert c["primal_violation"] < 1e-4
    return c


# --- acceptance summary ------------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Store one PASS/FAIL line for the end-of-run summary and echo it."""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
