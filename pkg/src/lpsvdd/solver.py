"""Projected-gradient solver for the lp-SVDD dual.

The dual is written as a minimisation over the generalised simplex
``{alpha >= 0, y @ alpha = 1}``::

    F(alpha) = C1 * sum_{y=+1} alpha^q + C2 * sum_{y=-1} alpha^q
               - sum_i alpha_i y_i K_ii + (alpha*y)' K (alpha*y)

with ``q = p / (p - 1)`` and ``C = (c p)^(-1/(p-1)) (1 - 1/p)``.  For ``p = 1``
the norm terms vanish and the multipliers are instead box-bounded by ``c1``/``c2``
(the classical SVDD quadratic programme).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .kernel import KernelMatrix


class SolverError(RuntimeError):
    pass


class InfeasibleProblem(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50_000
    objective_tolerance: float = 1e-10
    kkt_tolerance: float = 1e-6
    initial_step: float = 1.0
    backtracking_factor: float = 0.5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not (self.objective_tolerance > 0 and self.kkt_tolerance > 0 and self.initial_step > 0):
            raise ValueError("tolerances and initial_step must be positive")
        if not 0 < self.backtracking_factor < 1:
            raise ValueError("backtracking_factor must lie in (0, 1)")


def norm_coefficient(c: float, p: float) -> float:
    """``(c p)^(-1/(p-1)) (1 - 1/p)``, the weight of ``||alpha||_q^q`` in the dual."""
    return math.exp(-math.log(c * p) / (p - 1.0)) * (1.0 - 1.0 / p)


@dataclass(frozen=True)
class DualProblem:
    K: np.ndarray
    y: np.ndarray
    p: float
    c1: float
    c2: float = 1.0
    diag: np.ndarray | None = None

    def __post_init__(self):
        K = self.K.values if isinstance(self.K, KernelMatrix) else self.K
        K = np.asarray(K, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        if K.shape != (n, n):
            raise ValueError(f"kernel matrix shape {K.shape} does not match {n} labels")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be +1 or -1")
        if not self.p >= 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")
        if not np.any(y == 1):
            raise InfeasibleProblem("no positive samples: y @ alpha = 1 has no solution with alpha >= 0")
        if self.p == 1 and self.c1 * np.sum(y == 1) < 1:
            raise InfeasibleProblem(
                f"box-constrained problem infeasible: c1 * n_pos = "
                f"{self.c1} * {int(np.sum(y == 1))} < 1"
            )
        diag = np.diag(K).copy() if self.diag is None else np.asarray(self.diag, dtype=float)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "diag", diag)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def positive(self) -> np.ndarray:
        return self.y == 1

    def norm_weights(self) -> np.ndarray:
        """Per-sample ``C1``/``C2`` weight of the ``alpha^q`` term."""
        c1 = norm_coefficient(self.c1, self.p)
        c2 = norm_coefficient(self.c2, self.p)
        return np.where(self.positive, c1, c2)

    def upper_bounds(self) -> np.ndarray:
        """Box bounds for the p = 1 problem (infinite otherwise)."""
        if self.p != 1:
            return np.full(self.n, np.inf)
        return np.where(self.positive, self.c1, self.c2)

    def initial_point(self) -> np.ndarray:
        pos = self.positive
        return np.where(pos, 1.0 / pos.sum(), 0.0)


@dataclass
class DualSolution:
    alpha: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool
    history: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def _require_smooth(prob: DualProblem):
    if prob.p <= 1:
        raise ValueError("p must exceed 1 here; use the p1_* routines for p = 1")


def _check_alpha(alpha, prob: DualProblem) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (prob.n,):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({prob.n},)")
    if np.any(alpha < 0):
        raise ValueError("alpha must be nonnegative")
    return alpha


def _quadratic_terms(alpha, prob: DualProblem) -> tuple[float, np.ndarray]:
    beta = alpha * prob.y
    kb = prob.K @ beta
    return float(beta @ kb) - float(beta @ prob.diag), kb


def dual_objective(alpha, prob: DualProblem) -> float:
    _require_smooth(prob)
    alpha = _check_alpha(alpha, prob)
    quad, _ = _quadratic_terms(alpha, prob)
    return float(prob.norm_weights() @ alpha ** prob.q) + quad


def dual_gradient(alpha, prob: DualProblem) -> np.ndarray:
    _require_smooth(prob)
    alpha = _check_alpha(alpha, prob)
    q = prob.q
    _, kb = _quadratic_terms(alpha, prob)
    # alpha ** (q - 1) is 0 at alpha = 0 since q > 1
    return prob.norm_weights() * q * alpha ** (q - 1.0) - prob.y * prob.diag + 2.0 * prob.y * kb


def p1_objective(alpha, prob: DualProblem) -> float:
    """Negated classical SVDD dual: ``-sum alpha y K_ii + (alpha*y)' K (alpha*y)``."""
    alpha = np.asarray(alpha, dtype=float)
    quad, _ = _quadratic_terms(alpha, prob)
    return quad


def p1_gradient(alpha, prob: DualProblem) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    _, kb = _quadratic_terms(alpha, prob)
    return -prob.y * prob.diag + 2.0 * prob.y * kb


def _clip(v, y, lam, upper):
    return np.minimum(np.maximum(v - lam * y, 0.0), upper)


def project_feasible(v, y, upper=None) -> np.ndarray:
    """Euclidean projection onto ``{0 <= alpha <= upper, y @ alpha = 1}``.

    The solution has the form ``clip(v - lam * y, 0, upper)``.  ``y @ alpha`` is a
    nonincreasing piecewise-linear function of ``lam``; the kink containing the
    root is found by bisection over the sorted kinks and the root is then solved
    exactly on that linear piece.
    """
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    pos = y == 1
    if not np.any(pos):
        raise InfeasibleProblem("projection needs at least one positive label")
    upper = np.full(v.shape, np.inf) if upper is None else np.broadcast_to(upper, v.shape)
    if np.sum(upper[pos]) < 1:
        raise InfeasibleProblem("sum of positive upper bounds is below 1")

    kinks = np.concatenate([y * v, y * (v - upper)])
    kinks = np.unique(kinks[np.isfinite(kinks)])
    pad = max(1.0, float(np.max(np.abs(kinks))))
    pts = np.concatenate([[kinks[0] - pad], kinks, [kinks[-1] + pad]])

    def excess(lam):
        return float(y @ _clip(v, y, lam, upper)) - 1.0

    # invariant: excess(pts[lo]) >= 0 > excess(pts[hi])
    lo, hi = 0, len(pts) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if excess(pts[mid]) >= 0:
            lo = mid
        else:
            hi = mid
    a, b = pts[lo], pts[hi]
    ea, eb = excess(a), excess(b)
    lam = a if ea == 0 or not ea - eb > 0 else a + ea * (b - a) / (ea - eb)
    alpha = _clip(v, y, lam, upper)

    # mop up rounding on the free coordinates
    free = (alpha > 0) & (alpha < upper)
    if np.any(free):
        r = float(y @ alpha) - 1.0
        alpha[free] = np.minimum(np.maximum(alpha[free] - y[free] * r / free.sum(), 0.0), upper[free])
    return alpha


def _objective_and_gradient(prob: DualProblem):
    if prob.p == 1:
        return p1_objective, p1_gradient
    return dual_objective, dual_gradient


def kkt_residual(alpha, prob: DualProblem) -> float:
    """Fixed-point residual ``||alpha - P(alpha - grad)||_inf`` of the unit-step projected map."""
    alpha = np.asarray(alpha, dtype=float)
    _, grad = _objective_and_gradient(prob)
    g = grad(np.maximum(alpha, 0.0), prob)
    target = project_feasible(alpha - g, prob.y, prob.upper_bounds())
    return float(np.max(np.abs(alpha - target)))


def _projected_gradient(prob: DualProblem, config: SolverConfig, alpha0) -> DualSolution:
    fun, grad = _objective_and_gradient(prob)
    upper = prob.upper_bounds()

    def project(v):
        return project_feasible(v, prob.y, upper)

    x = project(prob.initial_point() if alpha0 is None else np.maximum(np.asarray(alpha0, float), 0.0))
    fx = fun(x, prob)
    g = grad(x, prob)
    step = config.initial_step
    beta = config.backtracking_factor
    history = [fx]
    converged = False
    kkt = math.inf
    it = 0
    for it in range(1, config.max_iterations + 1):
        t = step
        g_max = float(np.max(np.abs(g)))
        x_max = max(1.0, float(np.max(x)))
        stalled = False
        while True:
            if t * g_max <= 1e-15 * x_max:
                # the step no longer moves alpha representably
                stalled = True
                break
            x_new = project(x - t * g)
            d = x_new - x
            f_new = fun(x_new, prob)
            if f_new <= fx and f_new <= fx + g @ d + (d @ d) / (2.0 * t):
                break
            t *= beta
        if stalled or not np.any(d):
            kkt = kkt_residual(x, prob)
            converged = kkt < config.kkt_tolerance
            break
        g_new = grad(x_new, prob)
        s, yv = d, g_new - g
        sy = float(s @ yv)
        # Barzilai-Borwein guess for the next trial step
        step = float(s @ s) / sy if sy > 0 else t / beta
        change = fx - f_new
        x, fx, g = x_new, f_new, g_new
        history.append(fx)
        if change <= config.objective_tolerance * max(1.0, abs(fx)):
            kkt = kkt_residual(x, prob)
            if kkt < config.kkt_tolerance:
                converged = True
                break
    else:
        kkt = kkt_residual(x, prob)
    return DualSolution(x, fx, it, kkt, converged, np.asarray(history))


_REFINE_ITERATIONS = 500
_WARM_ITERATIONS = 200
_SQP_MAX_N = 400


def solve(prob: DualProblem, config: SolverConfig | None = None, alpha0=None) -> DualSolution:
    """Minimise the p > 1 dual from ``alpha0`` (default: uniform over positives).

    Projected gradient runs first.  If it has not converged after a short warm
    start on a problem of moderate size, an SQP step is taken from there and
    projected gradient resumes from whichever point is better; near p = 1 the
    norm term is badly conditioned and plain first-order steps crawl.
    """
    _require_smooth(prob)
    config = config or SolverConfig()
    warm = min(_WARM_ITERATIONS, config.max_iterations)
    sol = _projected_gradient(prob, replace(config, max_iterations=warm), alpha0)
    left = config.max_iterations - sol.iterations
    if not sol.converged and sol.iterations == warm and left > 0:
        start = sol
        if prob.n <= _SQP_MAX_N:
            start = _sqp_refine(prob, sol, dual_objective, dual_gradient, np.full(prob.n, np.inf))
        more = _projected_gradient(prob, replace(config, max_iterations=left), start.alpha)
        more.iterations += sol.iterations
        more.history = np.concatenate([start.history, more.history[1:]])
        sol = more
    if not sol.converged:
        return sol
    # primal quantities recovered from alpha inherit its error, so once the
    # tolerances are met spend a bounded budget on a tighter KKT residual
    tight = replace(config, kkt_tolerance=1e-2 * config.kkt_tolerance, max_iterations=_REFINE_ITERATIONS)
    more = _projected_gradient(prob, tight, sol.alpha)
    if more.objective <= sol.objective and more.kkt_residual < sol.kkt_residual:
        more.iterations += sol.iterations
        more.history = np.concatenate([sol.history, more.history[1:]])
        more.converged = True
        return more
    return sol


def _polish_active_set(prob: DualProblem, sol: DualSolution, rel_tol: float = 1e-9) -> DualSolution:
    """Re-solve the equality-constrained QP on the free set of a PGD solution."""
    alpha = sol.alpha
    upper = prob.upper_bounds()
    scale = max(1.0, float(np.max(alpha)))
    tol = rel_tol * scale
    at_upper = alpha >= upper - tol
    free = (alpha > tol) & ~at_upper
    if not np.any(free):
        return sol
    y = prob.y
    fixed = np.where(at_upper, upper, 0.0)
    Q = 2.0 * (y[:, None] * prob.K * y[None, :])
    lin = -y * prob.diag
    f = np.flatnonzero(free)
    m = f.size
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = Q[np.ix_(f, f)]
    A[:m, m] = y[f]
    A[m, :m] = y[f]
    rhs = np.concatenate([-lin[f] - Q[f] @ fixed, [1.0 - y @ fixed]])
    # the Gram matrix is often numerically singular, so take the least-norm
    # correction from the current iterate instead of an arbitrary solution
    g = Q @ alpha + lin
    w0 = np.concatenate([alpha[f], [-float(np.mean(g[f] * y[f]))]])
    try:
        dz = np.linalg.lstsq(A, rhs - A @ w0, rcond=1e-12)[0]
    except np.linalg.LinAlgError:
        return sol
    z = w0 + dz
    cand = fixed.copy()
    cand[f] = z[:m]
    if np.any(cand < 0) or np.any(cand > upper):
        return sol
    cand = project_feasible(cand, y, upper)
    f_cand = p1_objective(cand, prob)
    if f_cand > sol.objective + 1e-12 * max(1.0, abs(sol.objective)):
        return sol
    kkt = kkt_residual(cand, prob)
    if kkt > sol.kkt_residual and sol.converged:
        return sol
    history = np.append(sol.history, f_cand)
    return DualSolution(cand, f_cand, sol.iterations, kkt, sol.converged or kkt < 1e-6, history)


_P1_ROUND = 200


def _sqp_refine(prob: DualProblem, sol: DualSolution, objective, gradient, upper) -> DualSolution:
    """SLSQP step from ``sol``; kept only if it lowers the objective and the KKT residual."""
    y = prob.y

    def fun(a):
        return objective(np.clip(a, 0.0, upper), prob)

    def jac(a):
        return gradient(np.clip(a, 0.0, upper), prob)

    with np.errstate(over="ignore", invalid="ignore"):
        res = minimize(
            fun,
            sol.alpha,
            jac=jac,
            method="SLSQP",
            bounds=[(0.0, None if np.isinf(u) else u) for u in upper],
            constraints=[{"type": "eq", "fun": lambda a: y @ a - 1.0, "jac": lambda a: y}],
            options={"ftol": 1e-16, "maxiter": 1000},
        )
    if not np.all(np.isfinite(res.x)):
        return sol
    cand = project_feasible(np.clip(res.x, 0.0, upper), y, None if np.all(np.isinf(upper)) else upper)
    f_cand = objective(cand, prob)
    if not f_cand <= sol.objective:
        return sol
    kkt = kkt_residual(cand, prob)
    if kkt >= sol.kkt_residual:
        return sol
    return DualSolution(cand, f_cand, sol.iterations, kkt, False, np.append(sol.history, f_cand))


def p1_solve(prob: DualProblem, config: SolverConfig | None = None, alpha0=None) -> DualSolution:
    """Classical (p = 1) SVDD dual with box constraints ``0 <= alpha <= c``.

    Projected gradient runs in short rounds.  After each round the free set is
    guessed at a few thresholds and the equality-constrained QP on it is solved;
    if that does not certify the KKT conditions, problems of moderate size are
    handed to an active-set SQP step.  Kernel matrices of low-dimensional data
    are numerically singular, which makes plain projected gradient crawl.
    """
    if prob.p != 1:
        raise ValueError("p1_solve handles p = 1 only")
    config = config or SolverConfig()
    done = 0
    alpha = alpha0
    history = []
    while True:
        budget = min(_P1_ROUND, config.max_iterations - done)
        sol = _projected_gradient(prob, replace(config, max_iterations=budget), alpha)
        done += sol.iterations
        history.append(sol.history)
        best = sol
        for rel_tol in (1e-9, 1e-6, 1e-4):
            polished = _polish_active_set(prob, sol, rel_tol)
            if polished is not sol and polished.kkt_residual < best.kkt_residual:
                best = polished
        if best.kkt_residual >= config.kkt_tolerance and prob.n <= _SQP_MAX_N:
            best = _sqp_refine(prob, best, p1_objective, p1_gradient, prob.upper_bounds())
        best.converged = best.kkt_residual < config.kkt_tolerance
        stopped = sol.iterations < budget
        if best.converged or stopped or done >= config.max_iterations:
            best.iterations = done
            if best is not sol:
                history.append([best.objective])
            best.history = np.concatenate(history)
            return best
        alpha = best.alpha
