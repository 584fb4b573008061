"""Training, scoring and persistence of lp-SVDD descriptions."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, StandardizationParams, fit_standardizer, normalize_rows, standardize
from .kernel import KernelSpec, kernel_cross, kernel_matrix, width_heuristic
from .solver import DualProblem, DualSolution, SolverConfig, p1_solve, solve

FORMAT_NAME = "lpsvdd-model"
FORMAT_VERSION = 1
PREPROCESS_MODES = ("unit", "standardize", "none")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LpSvddModel:
    support_points: np.ndarray  # in preprocessed coordinates
    weights: np.ndarray  # alpha_i * y_i
    squared_radius: float
    center_norm_sq: float
    p: float
    c1: float
    c2: float
    kernel: KernelSpec
    preprocessing: StandardizationParams
    normalize_rows: bool = True
    support_epsilon: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return self.preprocessing.d

    @property
    def n_support(self) -> int:
        return self.weights.shape[0]

    def transform(self, x) -> np.ndarray:
        """Map raw feature rows into the space the description lives in."""
        z = standardize(x, self.preprocessing)
        return normalize_rows(z) if self.normalize_rows else z

    def distances(self, z_pre: np.ndarray) -> np.ndarray:
        """Squared feature-space distance to the centre for preprocessed rows."""
        kz = kernel_cross(self.support_points, z_pre, self.kernel)
        if self.kernel.kind == "gaussian":
            self_k = np.ones(z_pre.shape[0])
        else:
            self_k = np.einsum("ij,ij->i", z_pre, z_pre)
        return self_k - 2.0 * kz @ self.weights + self.center_norm_sq


@dataclass
class FitReport:
    dual: DualSolution
    slacks: np.ndarray
    primal_objective: float
    duality_gap: float
    radius_spread: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def dual_value(self) -> float:
        """Value of the (maximised) dual Lagrangian."""
        return -self.dual.objective

    @property
    def relative_gap(self) -> float:
        return self.duality_gap / max(1.0, abs(self.primal_objective))


def recover_slacks(alpha, y, p: float, c1: float, c2: float) -> np.ndarray:
    """Slacks from stationarity: ``zeta = (alpha / (c p))^(1 / (p - 1))``.

    Only valid for p > 1; the p = 1 fit recovers slacks from the primal
    constraints instead.
    """
    if p <= 1:
        raise ValueError("stationarity-based slack recovery needs p > 1")
    alpha = np.maximum(np.asarray(alpha, dtype=float), 0.0)
    c = np.where(np.asarray(y) == 1, c1, c2)
    return (alpha / (c * p)) ** (1.0 / (p - 1.0))


def squared_radius(alpha, slacks, K, y, support_epsilon: float) -> tuple[float, float]:
    """Mean and spread of ``f(x_j) - y_j zeta_j`` over multipliers above ``support_epsilon``."""
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(y, dtype=float)
    sv = alpha > support_epsilon
    if not np.any(sv):
        raise ValueError("no multiplier exceeds the support threshold")
    beta = alpha * y
    kb = K @ beta
    f = np.diag(K) - 2.0 * kb + beta @ kb
    r2 = f[sv] - y[sv] * slacks[sv]
    return float(np.mean(r2)), float(np.ptp(r2))


def _p1_radius(f, alpha, y, upper, eps) -> float:
    free = (alpha > eps) & (alpha < upper - eps)
    if np.any(free):
        return float(np.mean(f[free]))
    # every multiplier sits at a bound: R^2 lies between the bounding distances
    inside = ((y == 1) & (alpha <= eps)) | ((y == -1) & (alpha >= upper - eps))
    outside = ((y == 1) & (alpha >= upper - eps)) | ((y == -1) & (alpha <= eps))
    lo = np.max(f[inside]) if np.any(inside) else np.min(f)
    hi = np.min(f[outside]) if np.any(outside) else np.max(f)
    return 0.5 * (lo + hi)


def fit(
    train: Dataset,
    p: float,
    c1: float,
    c2: float = 1.0,
    kernel: KernelSpec | None = None,
    config: SolverConfig | None = None,
    preprocess: str = "unit",
) -> tuple[LpSvddModel, FitReport]:
    """Train a description on ``train`` (negatives, if present, are used).

    ``preprocess`` is one of ``PREPROCESS_MODES``: ``"unit"`` standardises with
    statistics of the training positives and then scales rows to unit length,
    ``"standardize"`` stops after standardising, ``"none"`` keeps raw
    coordinates.  A Gaussian kernel without a width gets the pairwise-distance
    heuristic on the preprocessed training set.
    """
    if preprocess not in PREPROCESS_MODES:
        raise ValueError(f"preprocess must be one of {PREPROCESS_MODES}, got {preprocess!r}")
    if train.n_positive == 0:
        raise DataError("training set has no positive samples")
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    kernel = kernel or KernelSpec()
    if preprocess == "none":
        params = StandardizationParams.identity(train.d)
    else:
        params = fit_standardizer(train.positives())
    x = standardize(train.features, params)
    if preprocess == "unit":
        x = normalize_rows(x)
    if not kernel.resolved:
        kernel = KernelSpec(kernel.kind, width_heuristic(x) if x.shape[0] > 1 else 1.0)

    y = train.labels.astype(float)
    K = kernel_matrix(x, kernel).values
    prob = DualProblem(K, y, p, c1, c2)
    sol = p1_solve(prob, config) if p == 1 else solve(prob, config)
    alpha = sol.alpha
    eps = 1e-6 * float(np.max(alpha))

    beta = alpha * y
    kb = K @ beta
    f_train = np.diag(K) - 2.0 * kb + beta @ kb
    if p == 1:
        r2 = _p1_radius(f_train, alpha, y, prob.upper_bounds(), eps)
        slacks = np.where(y == 1, np.maximum(0.0, f_train - r2), np.maximum(0.0, r2 - f_train))
        primal = r2 + c1 * slacks[y == 1].sum() + c2 * slacks[y == -1].sum()
        sv = (alpha > eps) & (alpha < prob.upper_bounds() - eps)
        spread = float(np.ptp(f_train[sv])) if np.any(sv) else 0.0
    else:
        slacks = recover_slacks(alpha, y, p, c1, c2)
        r2, spread = squared_radius(alpha, slacks, K, y, eps)
        primal = r2 + c1 * np.sum(slacks[y == 1] ** p) + c2 * np.sum(slacks[y == -1] ** p)

    keep = alpha > eps
    weights = beta[keep]
    support = x[keep]
    center = float(weights @ K[np.ix_(keep, keep)] @ weights)
    report = FitReport(
        dual=sol,
        slacks=slacks,
        primal_objective=float(primal),
        duality_gap=float(primal + sol.objective),
        radius_spread=spread,
    )
    if r2 < 0:
        report.warnings.append(f"negative squared radius {r2:.6g}")
    if not sol.converged:
        report.warnings.append(
            f"solver stopped after {sol.iterations} iterations, kkt residual {sol.kkt_residual:.3g}"
        )
    model = LpSvddModel(
        support_points=support,
        weights=weights,
        squared_radius=float(r2),
        center_norm_sq=center,
        p=float(p),
        c1=float(c1),
        c2=float(c2),
        kernel=kernel,
        preprocessing=params,
        normalize_rows=preprocess == "unit",
        support_epsilon=eps,
        diagnostics={
            "iterations": sol.iterations,
            "converged": sol.converged,
            "kkt_residual": sol.kkt_residual,
            "duality_gap": report.duality_gap,
            "radius_spread": spread,
        },
    )
    return model, report


def _as_rows(model: LpSvddModel, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != model.d:
        raise DataError(f"expected {model.d} features, got {z.shape[1]}")
    return z, single


def score(model: LpSvddModel, z):
    """Squared kernel-space distance of raw point(s) ``z`` to the centre (higher = more novel)."""
    rows, single = _as_rows(model, z)
    f = model.distances(model.transform(rows))
    return float(f[0]) if single else f


def predict(model: LpSvddModel, z, margin: float = 0.0):
    """+1 (target) when ``score <= R^2 + margin``, else -1."""
    f = score(model, z)
    labels = np.where(np.asarray(f) <= model.squared_radius + margin, 1, -1)
    return int(labels) if np.ndim(f) == 0 else labels


# --- persistence -------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _fmt_array(a: np.ndarray) -> str:
    a = np.asarray(a, dtype=float)
    shape = " ".join(str(s) for s in a.shape)
    return f"{shape} " + " ".join(_fmt(v) for v in a.ravel())


_SCALARS = ("p", "c1", "c2", "squared_radius", "center_norm_sq", "support_epsilon")
_VECTORS = ("mean", "std", "weights")
_FIELDS = ("kernel", "width", "normalize_rows", *_SCALARS, *_VECTORS, "support_points")
_DIAGNOSTICS = ("iterations", "converged", "kkt_residual", "duality_gap", "radius_spread")


def dumps_model(model: LpSvddModel) -> str:
    lines = [
        f"format {FORMAT_NAME}",
        f"version {FORMAT_VERSION}",
        f"kernel {model.kernel.kind}",
        f"width {_fmt(model.kernel.width) if model.kernel.width is not None else 'none'}",
        f"normalize_rows {int(model.normalize_rows)}",
    ]
    for key in _SCALARS:
        lines.append(f"{key} {_fmt(getattr(model, key))}")
    lines.append(f"mean {_fmt_array(model.preprocessing.mean)}")
    lines.append(f"std {_fmt_array(model.preprocessing.std)}")
    lines.append(f"weights {_fmt_array(model.weights)}")
    lines.append(f"support_points {_fmt_array(model.support_points)}")
    for key in _DIAGNOSTICS:
        if key in model.diagnostics:
            v = model.diagnostics[key]
            v = int(v) if isinstance(v, (bool, np.bool_, int, np.integer)) else _fmt(v)
            lines.append(f"diagnostics.{key} {v}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_array(key: str, tokens: list[str], ndim: int) -> np.ndarray:
    try:
        shape = tuple(int(t) for t in tokens[:ndim])
        values = [float(t) for t in tokens[ndim:]]
    except ValueError:
        raise ModelFormatError(f"field {key!r} is malformed") from None
    if len(shape) != ndim or len(values) != int(np.prod(shape)):
        raise ModelFormatError(f"field {key!r} is truncated")
    return np.array(values).reshape(shape)


def loads_model(text: str) -> LpSvddModel:
    entries: dict[str, list[str]] = {}
    for line in text.splitlines():
        parts = line.split()
        if parts:
            entries[parts[0]] = parts[1:]
    if entries.get("format") != [FORMAT_NAME]:
        raise ModelFormatError("not an lpsvdd model file")
    version = entries.get("version", ["?"])[0]
    if version != str(FORMAT_VERSION):
        raise ModelFormatError(
            f"unsupported model format version {version} (expected {FORMAT_VERSION})"
        )
    for key in _FIELDS:
        if key not in entries:
            raise ModelFormatError(f"model file is missing field {key!r}")
    try:
        scalars = {key: float(entries[key][0]) for key in _SCALARS}
        width_tok = entries["width"][0]
        width = None if width_tok == "none" else float(width_tok)
        kernel = KernelSpec(entries["kernel"][0], width)
        normalize = bool(int(entries["normalize_rows"][0]))
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    vectors = {key: _parse_array(key, entries[key], 1) for key in _VECTORS}
    support = _parse_array("support_points", entries["support_points"], 2)
    if support.shape[0] != vectors["weights"].shape[0]:
        raise ModelFormatError("support_points and weights disagree in length")
    diagnostics = {}
    for key in _DIAGNOSTICS:
        tok = entries.get(f"diagnostics.{key}")
        if tok:
            diagnostics[key] = float(tok[0])
    if "end" not in entries:
        raise ModelFormatError("model file is truncated (no end marker)")
    return LpSvddModel(
        support_points=support,
        weights=vectors["weights"],
        kernel=kernel,
        preprocessing=StandardizationParams(vectors["mean"], vectors["std"]),
        normalize_rows=normalize,
        diagnostics=diagnostics,
        **scalars,
    )


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: LpSvddModel, path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path) -> LpSvddModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    return loads_model(text)
