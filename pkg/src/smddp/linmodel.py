"""Exact distributed linear-regression math on horizontally partitioned data.

A dataset is an attribute matrix plus a response vector. Every party reduces
its rows to the sufficient statistics of the normal equations, computed on the
design matrix augmented with a leading intercept column:

    xtx = A'A     (d+1, d+1)   symmetric PSD
    xty = A'y     (d+1,)
    yty = y'y     scalar

Statistics of disjoint row blocks add element-wise, so pooling parties'
statistics reproduces the pooled-data regression exactly. Everything here is
plaintext and noise free; privacy noise lives in :mod:`smddp.dpfm`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "Dataset",
    "NormalizationBounds",
    "LocalStatistics",
    "ModelResult",
    "SingularSystemError",
    "OutOfRangeError",
    "compute_local_min_max",
    "merge_bounds",
    "normalize",
    "compute_local_statistics",
    "aggregate_statistics",
    "solve",
    "objective_error",
    "predict",
    "denormalize_prediction",
    "mse",
]

# Condition-number guard for the closed-form solve; beyond this the system is
# treated as singular and callers must repair via dpfm.optimize.
CONDITION_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """Normal-equation matrix is singular or numerically unusable."""


class OutOfRangeError(ValueError):
    """A value falls outside the normalization bounds (stale bounds)."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of a horizontally partitioned table: attributes ``x``, response ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-D, got shape {x.shape}")
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"row mismatch: x has {x.shape[0]} rows, y has {y.shape[0]}")
        if x.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def rows(self) -> int:
        return self.x.shape[0]

    @property
    def attrs(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True, eq=False)
class NormalizationBounds:
    """Column-wise minima/maxima over the d attribute columns then the response."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-D vectors of equal length")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self) -> int:
        return len(self.lower)


@dataclass(frozen=True, eq=False)
class LocalStatistics:
    """Sufficient statistics (A'A, A'y, y'y) of one party's augmented rows."""

    xtx: np.ndarray
    xty: np.ndarray
    yty: float

    def __post_init__(self):
        p = np.asarray(self.xtx, dtype=float)
        v = np.asarray(self.xty, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"xtx must be square, got shape {p.shape}")
        if v.shape != (p.shape[0],):
            raise ValueError(f"xty shape {v.shape} does not match xtx {p.shape}")
        object.__setattr__(self, "xtx", p)
        object.__setattr__(self, "xty", v)
        object.__setattr__(self, "yty", float(self.yty))

    @property
    def dim(self) -> int:
        return self.xtx.shape[0]


@dataclass(frozen=True, eq=False)
class ModelResult:
    """Published regression output: coefficients, objective error, bounds."""

    coef: np.ndarray
    err: float
    bounds: NormalizationBounds

    def __post_init__(self):
        w = np.asarray(self.coef, dtype=float)
        if w.ndim != 1 or not np.isfinite(w).all():
            raise ValueError("coefficients must be a finite 1-D vector")
        object.__setattr__(self, "coef", w)
        object.__setattr__(self, "err", float(self.err))


def _augment(x: np.ndarray) -> np.ndarray:
    """Prepend the constant-1 intercept column."""
    return np.column_stack([np.ones(x.shape[0]), x])


def compute_local_min_max(data: Dataset) -> NormalizationBounds:
    """Column minima/maxima over the attribute columns then the response."""
    lo = np.concatenate([data.x.min(axis=0), [data.y.min()]])
    hi = np.concatenate([data.x.max(axis=0), [data.y.max()]])
    return NormalizationBounds(lo, hi)


def merge_bounds(a: NormalizationBounds, b: NormalizationBounds) -> NormalizationBounds:
    """Element-wise union of two bound sets; associative and commutative."""
    if len(a) != len(b):
        raise ValueError(f"bounds length mismatch: {len(a)} vs {len(b)}")
    return NormalizationBounds(np.minimum(a.lower, b.lower), np.maximum(a.upper, b.upper))


def normalize(
    data: Dataset,
    bounds: NormalizationBounds,
    *,
    strict: bool = True,
    unit_row_norm: bool = False,
) -> Dataset:
    """Min-max rescale every column (response included) into [0, 1].

    Column j maps via (v - lower[j]) / (upper[j] - lower[j]); a degenerate
    column (lower == upper) maps to 0. With ``strict`` (the default), a value
    outside its column's bounds raises :class:`OutOfRangeError`, which signals
    stale bounds; pass ``strict=False`` when transforming unseen rows for
    prediction. ``unit_row_norm`` additionally divides each attribute column
    by sqrt(d+1) so every augmented row has norm at most 1.
    """
    if len(bounds) != data.attrs + 1:
        raise ValueError(f"bounds have {len(bounds)} columns, dataset needs {data.attrs + 1}")
    full = np.column_stack([data.x, data.y])
    if strict:
        low_viol = full < bounds.lower - 0.0
        high_viol = full > bounds.upper + 0.0
        if low_viol.any() or high_viol.any():
            r, c = np.argwhere(low_viol | high_viol)[0]
            raise OutOfRangeError(
                f"value {full[r, c]} at row {r}, column {c} outside "
                f"[{bounds.lower[c]}, {bounds.upper[c]}]"
            )
    span = bounds.upper - bounds.lower
    safe = np.where(span == 0.0, 1.0, span)
    scaled = (full - bounds.lower) / safe
    scaled[:, span == 0.0] = 0.0
    xn = scaled[:, :-1]
    if unit_row_norm:
        xn = xn / np.sqrt(data.attrs + 1)
    return Dataset(xn, scaled[:, -1])


def compute_local_statistics(data: Dataset) -> LocalStatistics:
    """Reduce (already normalized) rows to their normal-equation statistics."""
    a = _augment(data.x)
    xtx = a.T @ a
    xtx = (xtx + xtx.T) / 2.0  # exact symmetry regardless of BLAS rounding
    return LocalStatistics(xtx, a.T @ data.y, float(data.y @ data.y))


def aggregate_statistics(parts: list[LocalStatistics]) -> LocalStatistics:
    """Element-wise sum of per-party statistics; equals the pooled statistics."""
    if not parts:
        raise ValueError("need at least one party's statistics")
    dim = parts[0].dim
    for s in parts[1:]:
        if s.dim != dim:
            raise ValueError(f"statistics dimension mismatch: {s.dim} vs {dim}")
    xtx = np.zeros((dim, dim))
    xty = np.zeros(dim)
    yty = 0.0
    for s in parts:
        xtx += s.xtx
        xty += s.xty
        yty += s.yty
    return LocalStatistics(xtx, xty, yty)


def solve(stats: LocalStatistics) -> np.ndarray:
    """Closed-form coefficients from the normal equations.

    Uses a Cholesky factorization (the statistics matrix is symmetric PSD by
    construction) guarded by a condition estimate; raises
    :class:`SingularSystemError` rather than silently pseudo-inverting.
    """
    p = (stats.xtx + stats.xtx.T) / 2.0
    eigvals = scipy.linalg.eigvalsh(p)
    lo, hi = eigvals[0], eigvals[-1]
    if lo <= 0.0 or hi / lo > CONDITION_LIMIT:
        raise SingularSystemError(
            f"statistics matrix is singular or ill-conditioned "
            f"(eigenvalue range [{lo:.3e}, {hi:.3e}])"
        )
    c, low = scipy.linalg.cho_factor(p)
    w = scipy.linalg.cho_solve((c, low), stats.xty)
    residual = np.linalg.norm(p @ w - stats.xty) / max(1.0, np.linalg.norm(stats.xty))
    if residual > 1e-8:
        raise SingularSystemError(f"solve residual {residual:.3e} exceeds 1e-8")
    return w


def objective_error(stats: LocalStatistics, w: np.ndarray) -> float:
    """Quadratic objective w'(A'A)w - 2 w'(A'y) + y'y.

    For noise-free statistics this equals the residual sum of squares of ``w``
    on the underlying rows.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (stats.dim,):
        raise ValueError(f"coefficient shape {w.shape} does not match dimension {stats.dim}")
    return float(w @ stats.xtx @ w - 2.0 * (w @ stats.xty) + stats.yty)


def predict(x: np.ndarray, w: np.ndarray) -> float:
    """Dot product of the intercept-augmented attribute vector with ``w``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (len(w) - 1,):
        raise ValueError(f"attribute vector has {x.shape} entries, model expects {len(w) - 1}")
    return float(w[0] + x @ w[1:])


def denormalize_prediction(yhat: float, bounds: NormalizationBounds) -> float:
    """Map a normalized prediction back to response units (inverse of normalize)."""
    lo, hi = bounds.lower[-1], bounds.upper[-1]
    return float(yhat * (hi - lo) + lo)


def mse(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Mean squared difference between two equal-length vectors."""
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {actual.shape}")
    if len(predicted) == 0:
        raise ValueError("mse of empty vectors is undefined")
    diff = predicted - actual
    return float(diff @ diff / len(diff))
