"""Evaluation, hyperparameter search, multi-trial protocol, ranking and bounds."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .data import DataError, Dataset, three_way_split
from .kernel import KernelSpec
from .model import LpSvddModel, fit, score
from .solver import InfeasibleProblem, SolverConfig

DEFAULT_P_VALUES = tuple(
    float(Fraction(s))
    for s in ("32/31", "16/15", "8/7", "6/5", "4/3", "3/2", "2", "5/2", "5", "20")
)
DEFAULT_C_VALUES = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class RocResult:
    auc: float
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray


def roc_auc(scores, labels) -> RocResult:
    """ROC of an anomaly score (higher = more novel) where label +1 marks targets.

    A target counts as detected when its score is at or below the threshold, so
    the true positive rate is measured on targets and the false positive rate on
    novel samples.  The area is integrated with the trapezoid rule, which gives
    tied scores half credit.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    target = y == 1
    n_t, n_a = int(target.sum()), int((~target).sum())
    if n_t == 0 or n_a == 0:
        raise ValueError("AUC needs both target (+1) and novel (-1) samples")
    thresholds = np.unique(s)
    # counts at or below each threshold
    idx = np.searchsorted(np.sort(s[target]), thresholds, side="right")
    jdx = np.searchsorted(np.sort(s[~target]), thresholds, side="right")
    tpr = np.concatenate([[0.0], idx / n_t])
    fpr = np.concatenate([[0.0], jdx / n_a])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocResult(auc, thresholds, tpr, fpr)


@dataclass(frozen=True)
class GridSpec:
    p_values: tuple = DEFAULT_P_VALUES
    c1_values: tuple = DEFAULT_C_VALUES
    c2_values: tuple = DEFAULT_C_VALUES

    def __post_init__(self):
        if not (self.p_values and self.c1_values and self.c2_values):
            raise ValueError("grid lists must be nonempty")
        if any(not p >= 1 for p in self.p_values):
            raise ValueError("grid p values must be >= 1")
        if any(not c > 0 for c in (*self.c1_values, *self.c2_values)):
            raise ValueError("grid c values must be positive")

    def cells(self, with_negatives: bool):
        # without negatives c2 has no effect, so only its smallest value is visited
        c2s = sorted(self.c2_values) if with_negatives else [min(self.c2_values)]
        for p in sorted(self.p_values):
            for c1 in sorted(self.c1_values):
                for c2 in c2s:
                    yield p, c1, c2


@dataclass(frozen=True)
class GridResult:
    p: float
    c1: float
    c2: float
    validation_auc: float
    model: LpSvddModel = field(repr=False, compare=False)


def _require_both_classes(data: Dataset, what: str):
    if data.n_positive == 0 or data.n_negative == 0:
        raise DataError(f"{what} needs both classes: AUC is undefined without negatives")


def grid_search(
    train: Dataset,
    validation: Dataset,
    grid: GridSpec | None = None,
    kernel_kind: str = "gaussian",
    config: SolverConfig | None = None,
    preprocess: str = "unit",
) -> GridResult:
    """Fit every grid cell on ``train`` and keep the best validation AUC.

    Cells are visited in increasing (p, c1, c2) order and only a strictly
    better AUC replaces the incumbent, so ties go to the smallest p, then c1,
    then c2.  Cells whose p = 1 box constraints are infeasible are skipped.
    """
    grid = grid or GridSpec()
    _require_both_classes(validation, "validation set")
    best = None
    for p, c1, c2 in grid.cells(train.n_negative > 0):
        try:
            model, _ = fit(train, p, c1, c2, KernelSpec(kernel_kind), config, preprocess)
        except InfeasibleProblem:
            continue
        auc = roc_auc(score(model, validation.features), validation.labels).auc
        if best is None or auc > best.validation_auc:
            best = GridResult(p, c1, c2, auc, model)
    if best is None:
        raise InfeasibleProblem("no feasible grid cell for this training set")
    return best


@dataclass
class TrialReport:
    per_trial_auc: list[float]
    mean_auc: float
    std_auc: float
    chosen_params: list[tuple[float, float, float]]
    seeds: list[int]
    validation_auc: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        """One row per trial: trial, seed, p, c1, c2, validation_auc, test_auc."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "seed", "p", "c1", "c2", "validation_auc", "test_auc"])
        for t, (seed, (p, c1, c2), v, a) in enumerate(
            zip(self.seeds, self.chosen_params, self.validation_auc, self.per_trial_auc), start=1
        ):
            w.writerow([t, seed, repr(p), repr(c1), repr(c2), repr(v), repr(a)])
        return buf.getvalue()

    def summary(self) -> str:
        return f"{100 * self.mean_auc:.2f}±{100 * self.std_auc:.2f}"


def _one_trial(args):
    data, seed, ratios, grid, kernel_kind, config, use_negatives, preprocess = args
    splits = three_way_split(data, ratios, seed)
    train = splits.train if use_negatives else splits.train.positives()
    _require_both_classes(splits.test, "test set")
    best = grid_search(train, splits.validation, grid, kernel_kind, config, preprocess)
    # the winning cell was already fitted on exactly this training set
    auc = roc_auc(score(best.model, splits.test.features), splits.test.labels).auc
    return (best.p, best.c1, best.c2), best.validation_auc, auc


def run_trials(
    data: Dataset,
    trials: int = 10,
    ratios=(0.4, 0.3, 0.3),
    grid: GridSpec | None = None,
    kernel_kind: str = "gaussian",
    config: SolverConfig | None = None,
    base_seed: int = 0,
    use_negatives: bool = False,
    jobs: int = 1,
    preprocess: str = "unit",
) -> TrialReport:
    """Repeat split / tune-on-validation / score-on-test ``trials`` times.

    Trial ``t`` (1-based) uses split seed ``base_seed + t``.  Without
    ``use_negatives`` only the training positives are used for fitting;
    validation and test always contain both classes.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    _require_both_classes(data, "trial protocol")
    grid = grid or GridSpec()
    seeds = [base_seed + t for t in range(1, trials + 1)]
    tasks = [(data, s, ratios, grid, kernel_kind, config, use_negatives, preprocess) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_trial, tasks))
    else:
        results = [_one_trial(t) for t in tasks]
    aucs = [r[2] for r in results]
    return TrialReport(
        per_trial_auc=aucs,
        mean_auc=float(np.mean(aucs)),
        std_auc=float(np.std(aucs)),
        chosen_params=[r[0] for r in results],
        seeds=seeds,
        validation_auc=[r[1] for r in results],
    )


def average_rank(auc_table) -> np.ndarray:
    """Mean rank per method (rows) over datasets (columns); best AUC ranks 1, ties share."""
    a = np.asarray(auc_table, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("need a nonempty methods x datasets table")
    if not np.all(np.isfinite(a)):
        raise ValueError("table has missing entries")
    ranks = np.apply_along_axis(lambda col: rankdata(-col, method="average"), 0, a)
    return ranks.mean(axis=1)


def rank_table_csv(methods, ranks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "average_rank"])
    for m, r in zip(methods, ranks):
        w.writerow([m, repr(float(r))])
    return buf.getvalue()


# --- generalisation bounds ---------------------------------------------------

def rademacher_bound(B: float, n: int, trace_K: float, B_kappa: float) -> tuple[float, float]:
    """Trace-based and uniform upper bounds on the empirical Rademacher complexity
    of ``{x -> w' phi(x) : ||w|| <= B}``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if min(B, trace_K, B_kappa) < 0:
        raise ValueError("inputs must be nonnegative")
    return 2.0 * B / n * math.sqrt(trace_K), 2.0 * B * B_kappa / math.sqrt(n)


@dataclass(frozen=True)
class BoundInputs:
    n: int
    p: float
    upsilon: float
    delta: float
    B: float
    B_kappa: float
    R_sq: float
    zeta_p_norm_p: float
    trace_K: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.p >= 1:
            raise ValueError("p must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.upsilon > 0:
            raise ValueError("upsilon must be positive")
        if self.B < 0 or self.zeta_p_norm_p < 0 or not self.B_kappa > 0:
            raise ValueError("B and the slack norm must be nonnegative, B_kappa positive")


def error_probability_bound(inputs: BoundInputs) -> float:
    """Misclassification-probability bound; returned unclipped (it may exceed 1)."""
    b = inputs
    v_p = b.upsilon ** b.p
    slack_term = b.zeta_p_norm_p / (b.n * v_p)
    base = b.B ** 2 + 3.0 * b.B_kappa ** 2 + b.R_sq
    complexity = 4.0 * b.p * b.B * b.B_kappa / (v_p * math.sqrt(b.n)) * base ** (b.p - 1.0)
    confidence = 3.0 * math.sqrt(math.log(2.0 / b.delta) / (2.0 * b.n))
    return slack_term + complexity + confidence


def bound_inputs_from_fit(model: LpSvddModel, slacks, n: int, upsilon: float, delta: float) -> BoundInputs:
    """Plug a fitted model into the bound: ``B`` is the centre norm, ``B_kappa = 1``
    for the Gaussian kernel (largest self-similarity of the support set otherwise)."""
    if model.kernel.kind == "gaussian":
        b_kappa = 1.0
    else:
        b_kappa = float(np.sqrt(np.max(np.einsum("ij,ij->i", model.support_points, model.support_points))))
    zeta = np.asarray(slacks, dtype=float)
    return BoundInputs(
        n=n,
        p=model.p,
        upsilon=upsilon,
        delta=delta,
        B=math.sqrt(max(model.center_norm_sq, 0.0)),
        B_kappa=b_kappa,
        R_sq=model.squared_radius,
        zeta_p_norm_p=float(np.sum(zeta ** model.p)),
    )
