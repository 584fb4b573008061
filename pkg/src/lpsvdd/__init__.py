"""lp slack-norm support vector data description."""

from .analysis import (
    BoundInputs,
    GridSpec,
    TrialReport,
    average_rank,
    error_probability_bound,
    grid_search,
    rademacher_bound,
    roc_auc,
    run_trials,
)
from .data import (
    DataError,
    Dataset,
    StandardizationParams,
    apply_standardizer,
    fit_standardizer,
    load_csv,
    three_way_split,
)
from .kernel import KernelSpec, kernel_cross, kernel_eval, kernel_matrix, width_heuristic
from .model import FitReport, LpSvddModel, fit, load_model, predict, save_model, score
from .solver import DualProblem, DualSolution, SolverConfig, p1_solve, solve

__version__ = "0.1.0"
