"""Differential privacy for the regression objective via coefficient perturbation.

The quadratic objective of :mod:`smddp.linmodel` is a polynomial in the model
coefficients whose monomial coefficients are exactly the entries of the local
statistics: ``yty`` (degree 0), ``xty`` (degree 1) and the upper triangle of
``xtx`` (degree 2). Perturbing each of those once with calibrated Laplace
noise and then minimizing the noisy objective yields an epsilon-differentially
private model. For min-max normalized data with d attributes the sensitivity
of the coefficient set is 2(d+1)^2.

In the distributed setting every party injects independently; each party
additionally multiplies its noise by a per-party scaling factor so that the
accumulated sum of the parties' noise terms keeps a Laplace-like shape. The
scaling factor is configurable: a geometric draw (the empirical default), the
deterministic constant sqrt(p), or 1 (no scaling).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linmodel import LocalStatistics

__all__ = [
    "ScalingMode",
    "PrivacyParams",
    "NoiseSpec",
    "global_sensitivity",
    "local_budget",
    "sample_laplace",
    "sample_geometric",
    "scaling_factor",
    "noise_inject",
    "cdp_inject",
    "optimize",
    "party_rng",
]

DEFAULT_EIG_FLOOR = 1e-8
DEFAULT_RIDGE = 1e-6


class ScalingMode(enum.Enum):
    """How each party scales its injected noise."""

    GEOMETRIC = "geometric-per-party"
    SQRT_P = "deterministic-sqrt-p"
    NONE = "none"


@dataclass(frozen=True)
class PrivacyParams:
    """Global budget epsilon, local ratio alpha, and geometric parameter p."""

    epsilon: float
    alpha: float = 1.0
    geometric_p: float = 0.9
    scaling: ScalingMode = ScalingMode.GEOMETRIC

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.geometric_p < 1.0:
            raise ValueError("geometric parameter must lie in (0, 1)")


@dataclass(frozen=True)
class NoiseSpec:
    """Sensitivity, local budget, and the implied Laplace scale."""

    sensitivity: float
    epsilon_local: float
    scale: float

    def __post_init__(self):
        if self.sensitivity <= 0.0 or self.epsilon_local <= 0.0:
            raise ValueError("sensitivity and local budget must be positive")
        if abs(self.scale - self.sensitivity / self.epsilon_local) > 1e-12 * self.scale:
            raise ValueError("scale must equal sensitivity / epsilon_local")

    @classmethod
    def from_budget(cls, sensitivity: float, epsilon_local: float) -> "NoiseSpec":
        return cls(sensitivity, epsilon_local, sensitivity / epsilon_local)


def global_sensitivity(d: int) -> float:
    """Sensitivity 2(d+1)^2 of the objective coefficients for d attributes."""
    if d < 0:
        raise ValueError("attribute count must be nonnegative")
    return 2.0 * (d + 1) ** 2


def local_budget(params: PrivacyParams) -> float:
    """Each party's budget share alpha * epsilon."""
    return params.alpha * params.epsilon


def sample_laplace(scale: float, rng: np.random.Generator, size=None):
    """Draw from Lap(0, scale) by inverse CDF.

    With u uniform on (-1/2, 1/2) the draw is -scale * sign(u) * log(1 - 2|u|).
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    u = rng.uniform(-0.5, 0.5, size)
    # u = -1/2 has probability 0 but would hit log(0); nudge it off the edge.
    inner = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(float).tiny)
    out = -scale * np.sign(u) * np.log(inner)
    return out if size is not None else float(out)


def sample_geometric(p: float, rng: np.random.Generator) -> int:
    """Geometric draw on {1, 2, ...} with Pr[k] = (1-p)^(k-1) p, mean 1/p."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return int(rng.geometric(p))


def scaling_factor(params: PrivacyParams, rng: np.random.Generator) -> float:
    """One per-party noise multiplier per invocation, per the scaling mode."""
    if params.scaling is ScalingMode.GEOMETRIC:
        return float(sample_geometric(params.geometric_p, rng))
    if params.scaling is ScalingMode.SQRT_P:
        return float(np.sqrt(params.geometric_p))
    return 1.0


def _perturb(
    stats: LocalStatistics, scale: float, factor: float, rng: np.random.Generator
) -> LocalStatistics:
    """Perturb each distinct objective coefficient once by factor * Lap(scale).

    The upper triangle of the quadratic block (diagonal included) is perturbed
    and mirrored, preserving symmetry exactly.
    """
    dim = stats.dim
    xtx = stats.xtx.copy()
    iu = np.triu_indices(dim)
    xtx[iu] += factor * sample_laplace(scale, rng, size=len(iu[0]))
    xtx.T[iu] = xtx[iu]
    xty = stats.xty + factor * sample_laplace(scale, rng, size=dim)
    yty = stats.yty + factor * sample_laplace(scale, rng)
    return LocalStatistics(xtx, xty, yty)


def noise_inject(
    stats: LocalStatistics,
    spec: NoiseSpec,
    params: PrivacyParams,
    rng: np.random.Generator,
) -> LocalStatistics:
    """One party's private release of its local statistics.

    Draws the party's scaling factor, then perturbs every distinct coefficient
    by an independent scaled Laplace draw at scale sensitivity / epsilon_local.
    """
    factor = scaling_factor(params, rng)
    return _perturb(stats, spec.scale, factor, rng)


def cdp_inject(
    aggregated: LocalStatistics, sensitivity: float, epsilon: float, rng: np.random.Generator
) -> LocalStatistics:
    """Centralized baseline: a single unscaled injection at scale sensitivity/epsilon."""
    if sensitivity <= 0.0 or epsilon <= 0.0:
        raise ValueError("sensitivity and epsilon must be positive")
    return _perturb(aggregated, sensitivity / epsilon, 1.0, rng)


def optimize(
    noisy: LocalStatistics,
    ridge: float = DEFAULT_RIDGE,
    eig_floor: float = DEFAULT_EIG_FLOOR,
) -> tuple[LocalStatistics, np.ndarray]:
    """Minimize the noisy objective after repairing its quadratic coefficient.

    Symmetrizes the quadratic block, clamps every eigenvalue below
    ``eig_floor`` up to ``eig_floor`` (spectral trimming), adds ``ridge`` times
    the identity, and solves the repaired system. Returns the repaired
    statistics and the minimizer; always produces finite coefficients.
    """
    if not (
        np.isfinite(noisy.xtx).all() and np.isfinite(noisy.xty).all() and np.isfinite(noisy.yty)
    ):
        raise ValueError("noisy statistics contain non-finite values")
    if ridge < 0.0 or eig_floor < 0.0:
        raise ValueError("ridge and eig_floor must be nonnegative")
    sym = (noisy.xtx + noisy.xtx.T) / 2.0
    eigvals, eigvecs = scipy.linalg.eigh(sym)
    clamped = np.maximum(eigvals, eig_floor)
    repaired = (eigvecs * clamped) @ eigvecs.T
    repaired += ridge * np.eye(noisy.dim)
    repaired = (repaired + repaired.T) / 2.0
    try:
        c, low = scipy.linalg.cho_factor(repaired)
        w = scipy.linalg.cho_solve((c, low), noisy.xty)
    except scipy.linalg.LinAlgError:
        # Only reachable when both repair strengths are zero.
        w, *_ = np.linalg.lstsq(repaired, noisy.xty, rcond=None)
    return LocalStatistics(repaired, noisy.xty, noisy.yty), w


def party_rng(master_seed: int, party_index: int, run_index: int = 0) -> np.random.Generator:
    """Independent, reproducible random stream for one party in one run."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, party_index, run_index)))
