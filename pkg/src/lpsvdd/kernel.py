"""Gaussian and linear kernels, Gram matrices and the bandwidth heuristic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist


KINDS = ("gaussian", "linear")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice. ``width`` is the Gaussian sigma; ``None`` means "pick from data"."""

    kind: str = "gaussian"
    width: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gaussian" and self.width is not None and not self.width > 0:
            raise ValueError(f"gaussian width must be positive, got {self.width}")

    @property
    def resolved(self) -> bool:
        return self.kind == "linear" or self.width is not None


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    spec: KernelSpec

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.values).copy()

    @property
    def unit_diagonal(self) -> bool:
        return bool(np.all(np.diag(self.values) == 1.0))


def width_heuristic(points) -> float:
    """Half the mean Euclidean distance over unordered pairs of distinct rows."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[0] < 2:
        raise ValueError("width heuristic needs at least two points")
    width = 0.5 * float(np.mean(pdist(x)))
    if not width > 0:
        raise ValueError("all points are identical; kernel width would be zero")
    return width


def _check_resolved(spec: KernelSpec):
    if not spec.resolved:
        raise ValueError("gaussian kernel width is unset; resolve it before evaluating")


def kernel_eval(x, z, spec: KernelSpec) -> float:
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    _check_resolved(spec)
    if spec.kind == "linear":
        return float(x @ z)
    diff = x - z
    return float(np.exp(-(diff @ diff) / (2.0 * spec.width ** 2)))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion: keeps
    # exact zeros on the diagonal and no negative round-off
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_cross(train, queries, spec: KernelSpec) -> np.ndarray:
    """m x n matrix of kernel values between query rows and training rows."""
    train = np.atleast_2d(np.asarray(train, dtype=float))
    queries = np.asarray(queries, dtype=float)
    if queries.size == 0:
        return np.zeros((0, train.shape[0]))
    queries = np.atleast_2d(queries)
    if queries.shape[1] != train.shape[1]:
        raise ValueError(f"dimension mismatch: {queries.shape[1]} vs {train.shape[1]}")
    _check_resolved(spec)
    if spec.kind == "linear":
        return queries @ train.T
    return np.exp(-_sq_dists(queries, train) / (2.0 * spec.width ** 2))


def kernel_matrix(points, spec: KernelSpec) -> KernelMatrix:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    k = kernel_cross(x, x, spec)
    # mirror the upper triangle so the matrix is exactly symmetric
    upper = np.triu(k)
    k = upper + np.triu(k, 1).T
    if spec.kind == "gaussian":
        np.fill_diagonal(k, 1.0)
    return KernelMatrix(k, spec)
