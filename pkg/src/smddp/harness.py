"""Experiment engine: privacy-accuracy sweeps, scalability, overhead timing.

Accuracy experiments (``run_experiment``/``sweep``) compare three release
pipelines on the same data:

    NoDP  noise-free aggregation of the parties' statistics,
    DDP   every party privatizes its own statistics before aggregation,
    CDP   a trusted collector privatizes the pooled statistics once.

These run the protocol's statistical path in plaintext: the homomorphic layer
adds nothing but fixed-point quantization (about one part in the codec scale,
far below every tolerance measured here), so leaving it out changes no MSE
while making hundred-repeat sweeps tractable. The end-to-end encrypted
protocol is exercised separately by :func:`bench_overhead`, which times real
runs of :func:`smddp.protocol.run_protocol` phase by phase.

Model quality is measured by k-fold cross validation: per repeat the rows are
re-split into folds, each fold held out once while the remaining rows are
partitioned among the parties and fitted, and squared errors of de-normalized
predictions are pooled over all held-out rows. Every random choice derives
from (seed, repeat, fold, party), so a result table is reproducible from its
spec; the wall-clock timing columns are the one exception.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import linmodel as lm
from .dpfm import (
    DEFAULT_EIG_FLOOR,
    DEFAULT_RIDGE,
    PrivacyParams,
    ScalingMode,
    cdp_inject,
    global_sensitivity,
    noise_inject,
    NoiseSpec,
    optimize,
)
from .linmodel import Dataset
from .protocol import ProtocolConfig, run_protocol

__all__ = [
    "SyntheticSource",
    "CsvSource",
    "ExperimentSpec",
    "ResultRow",
    "TimingRow",
    "CsvFormatError",
    "MODES",
    "generate_synthetic",
    "planted_coefficients",
    "load_csv",
    "split_horizontal",
    "load_source",
    "run_experiment",
    "sweep",
    "bench_overhead",
    "fit_linear",
    "write_results_csv",
    "read_results_csv",
    "write_timing_csv",
]

MODES = ("NoDP", "DDP", "CDP")

# Stream tags keeping the harness's derived random streams disjoint.
_TAG_X = 0x58
_TAG_COEF = 0xC0EF
_TAG_FOLDS = 0xF01D
_TAG_SPLIT = 0x5B11
_TAG_CDP = 0xCD
_TAG_PARTY = 0x9A


class CsvFormatError(ValueError):
    """Input CSV violates the expected all-numeric layout."""


@dataclass(frozen=True)
class SyntheticSource:
    """Uniform attributes on [0,1]^d with a planted linear response."""

    rows: int
    attrs: int
    noise_sd: float = 0.0
    coef_seed: int | None = None


@dataclass(frozen=True)
class CsvSource:
    path: str


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment cell family: a mode evaluated over a budget grid."""

    mode: str
    epsilons: tuple[float, ...]
    n_parties: int
    data: SyntheticSource | CsvSource
    geometric_p: float = 0.9
    alpha_rule: str = "fixed"  # or "equal-to-n"
    alpha: float = 1.0
    scaling: ScalingMode = ScalingMode.GEOMETRIC
    repeats: int = 100
    folds: int = 5
    seed: int = 0
    ridge: float = DEFAULT_RIDGE
    eig_floor: float = DEFAULT_EIG_FLOOR
    normalized_mse: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be a nonempty grid of positive budgets")
        if self.repeats < 1 or self.folds < 2 or self.n_parties < 1:
            raise ValueError("repeats >= 1, folds >= 2, n_parties >= 1 required")
        if self.alpha_rule not in ("fixed", "equal-to-n"):
            raise ValueError(f"unknown alpha rule {self.alpha_rule!r}")
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))

    @property
    def effective_alpha(self) -> float:
        return float(self.n_parties) if self.alpha_rule == "equal-to-n" else self.alpha


@dataclass(frozen=True)
class ResultRow:
    mode: str
    epsilon: float
    p: float
    alpha: float
    n: int
    mean_mse: float
    mse_stddev: float
    timing: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class TimingRow:
    n: int
    d: int
    rows: int
    key_bits: int
    keygen_ms: float
    minmax_ms: float
    regression_ms: float
    reconstruct_ms: float
    total_ms: float


# -- data ----------------------------------------------------------------------


def planted_coefficients(d: int, seed: int) -> np.ndarray:
    """The intercept-plus-slopes vector a synthetic dataset was built from."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, _TAG_COEF)))
    return rng.uniform(-1.0, 1.0, d + 1)


def generate_synthetic(rows: int, d: int, noise_sd: float, seed: int) -> Dataset:
    """Uniform attribute matrix with response X~beta + Gaussian noise."""
    if rows < d + 2:
        raise ValueError(f"need at least d+2={d + 2} rows, got {rows}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, _TAG_X)))
    beta = planted_coefficients(d, seed)
    x = rng.uniform(0.0, 1.0, (rows, d))
    y = beta[0] + x @ beta[1:]
    if noise_sd > 0.0:
        y = y + rng.normal(0.0, noise_sd, rows)
    return Dataset(x, y)


def load_csv(path: str) -> Dataset:
    """Read a header-plus-numeric-rows CSV; the last column is the response.

    Any row with a missing or non-numeric field aborts the load with the
    offending line numbers, so only complete samples ever enter a run.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise CsvFormatError(f"{path}: need at least one attribute and a response column")
        values = []
        bad_lines = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                bad_lines.append(lineno)
                continue
            try:
                values.append([float(v) for v in row])
            except ValueError:
                bad_lines.append(lineno)
    if bad_lines:
        shown = ", ".join(str(b) for b in bad_lines[:10])
        raise CsvFormatError(
            f"{path}: {len(bad_lines)} malformed row(s) at line(s) {shown}"
        )
    if not values:
        raise CsvFormatError(f"{path}: no data rows")
    table = np.asarray(values, dtype=float)
    return Dataset(table[:, :-1], table[:, -1])


def load_source(source: SyntheticSource | CsvSource, seed: int) -> Dataset:
    if isinstance(source, CsvSource):
        return load_csv(source.path)
    coef_seed = source.coef_seed if source.coef_seed is not None else seed
    return generate_synthetic(source.rows, source.attrs, source.noise_sd, coef_seed)


def split_horizontal(data: Dataset, n: int, seed: int) -> list[Dataset]:
    """Disjoint random partition into n shards with sizes differing by at most 1."""
    if n < 1:
        raise ValueError("need at least one shard")
    if n > data.rows:
        raise ValueError(f"cannot split {data.rows} rows into {n} parties")
    perm = np.random.default_rng(np.random.SeedSequence((seed, _TAG_SPLIT))).permutation(
        data.rows
    )
    return [Dataset(data.x[idx], data.y[idx]) for idx in np.array_split(perm, n)]


# -- accuracy pipeline ----------------------------------------------------------


def _fit_fold(
    spec: ExperimentSpec, train: Dataset, epsilon: float, repeat: int, fold: int
) -> tuple[np.ndarray, lm.NormalizationBounds]:
    """Train one fold's model through the configured release pipeline."""
    bounds = lm.compute_local_min_max(train)
    normalized = lm.normalize(train, bounds)
    sensitivity = global_sensitivity(train.attrs)
    if spec.mode == "DDP":
        shard_seed = int(
            np.random.SeedSequence((spec.seed, repeat, fold, _TAG_SPLIT)).generate_state(1)[0]
        )
        shards = split_horizontal(normalized, spec.n_parties, shard_seed)
        params = PrivacyParams(epsilon, spec.effective_alpha, spec.geometric_p, spec.scaling)
        noise = NoiseSpec.from_budget(sensitivity, spec.effective_alpha * epsilon)
        parts = []
        for k, shard in enumerate(shards):
            rng = np.random.default_rng(
                np.random.SeedSequence((spec.seed, repeat, fold, k, _TAG_PARTY))
            )
            parts.append(noise_inject(lm.compute_local_statistics(shard), noise, params, rng))
        stats = lm.aggregate_statistics(parts)
    elif spec.mode == "CDP":
        rng = np.random.default_rng(
            np.random.SeedSequence((spec.seed, repeat, fold, _TAG_CDP))
        )
        stats = cdp_inject(
            lm.compute_local_statistics(normalized), sensitivity, epsilon, rng
        )
    else:  # NoDP
        stats = lm.compute_local_statistics(normalized)
    _, w = optimize(stats, spec.ridge, spec.eig_floor)
    return w, bounds


def _evaluate_fold(
    spec: ExperimentSpec,
    w: np.ndarray,
    bounds: lm.NormalizationBounds,
    test: Dataset,
) -> tuple[float, int]:
    """Pooled squared error of the fold's model on its held-out rows."""
    # Held-out rows may fall outside the training extremes; the affine map
    # simply extrapolates there.
    scaled = lm.normalize(test, bounds, strict=False)
    yhat = w[0] + scaled.x @ w[1:]
    if spec.normalized_mse:
        diff = yhat - scaled.y
    else:
        lo, hi = bounds.lower[-1], bounds.upper[-1]
        diff = (yhat * (hi - lo) + lo) - test.y
    return float(diff @ diff), test.rows


def _repeat_mse(spec: ExperimentSpec, data: Dataset, epsilon: float, repeat: int) -> float:
    """One repeat: k-fold cross-validated MSE at one budget."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, repeat, _TAG_FOLDS)))
    folds = np.array_split(rng.permutation(data.rows), spec.folds)
    sq_total, count = 0.0, 0
    for f, test_idx in enumerate(folds):
        train_idx = np.concatenate([folds[g] for g in range(spec.folds) if g != f])
        train = Dataset(data.x[train_idx], data.y[train_idx])
        w, bounds = _fit_fold(spec, train, epsilon, repeat, f)
        sq, cnt = _evaluate_fold(spec, w, bounds, Dataset(data.x[test_idx], data.y[test_idx]))
        sq_total += sq
        count += cnt
    return sq_total / count


def run_experiment(spec: ExperimentSpec, data: Dataset | None = None) -> list[ResultRow]:
    """Evaluate the spec's mode over its budget grid, averaged over repeats.

    NoDP ignores the budget, so its per-repeat values are computed once and
    reused for every grid point.
    """
    if data is None:
        data = load_source(spec.data, spec.seed)
    if data.rows < spec.folds * 2:
        raise ValueError("too few rows for the requested fold count")
    out = []
    cached_nodp: list[float] | None = None
    for epsilon in spec.epsilons:
        t_start = time.perf_counter()
        if spec.mode == "NoDP" and cached_nodp is not None:
            values = cached_nodp
        else:
            values = [_repeat_mse(spec, data, epsilon, r) for r in range(spec.repeats)]
            if spec.mode == "NoDP":
                cached_nodp = values
        elapsed_ms = (time.perf_counter() - t_start) * 1e3
        out.append(
            ResultRow(
                mode=spec.mode,
                epsilon=epsilon,
                p=spec.geometric_p,
                alpha=spec.effective_alpha,
                n=spec.n_parties,
                mean_mse=float(np.mean(values)),
                mse_stddev=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
                timing={
                    "keygen_ms": 0.0,
                    "minmax_ms": 0.0,
                    "regression_ms": elapsed_ms,
                    "total_ms": elapsed_ms,
                },
            )
        )
    return out


def sweep(
    base: ExperimentSpec,
    modes=None,
    ps=None,
    alphas=None,
    ns=None,
) -> list[ResultRow]:
    """Cartesian-product runs over mode, geometric p, alpha, and party count.

    Each grid argument defaults to the single value carried by ``base``; an
    explicitly empty grid is rejected. ``alphas`` entries may be numbers or
    the string ``"n"`` for the alpha-equals-parties rule.
    """
    grids = {
        "modes": list(modes) if modes is not None else [base.mode],
        "ps": list(ps) if ps is not None else [base.geometric_p],
        "alphas": list(alphas) if alphas is not None else [None],
        "ns": list(ns) if ns is not None else [base.n_parties],
    }
    for name, grid in grids.items():
        if not grid:
            raise ValueError(f"empty grid dimension: {name}")
    data = load_source(base.data, base.seed)
    out = []
    for mode in grids["modes"]:
        for p in grids["ps"]:
            for alpha in grids["alphas"]:
                for n in grids["ns"]:
                    if alpha is None:
                        rule, value = base.alpha_rule, base.alpha
                    elif alpha == "n":
                        rule, value = "equal-to-n", base.alpha
                    else:
                        rule, value = "fixed", float(alpha)
                    spec = replace(
                        base, mode=mode, geometric_p=p, alpha_rule=rule, alpha=value,
                        n_parties=n,
                    )
                    out.extend(run_experiment(spec, data))
    return out


# -- overhead benchmark ----------------------------------------------------------


def fit_linear(xs, ys) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def bench_overhead(
    n_grid,
    d_grid,
    rows: int,
    key_bits: int = 1024,
    seed: int = 0,
    epsilon: float = 1.0,
    transport: str = "in-process",
) -> tuple[list[TimingRow], dict[int, dict[str, float]]]:
    """Time full encrypted protocol runs over party-count and width grids.

    Returns the per-cell phase timings plus, per attribute count, the linear
    fit of regression-phase time against the number of parties (the phase
    whose work grows with every added party).
    """
    n_grid = list(n_grid)
    d_grid = list(d_grid)
    if not n_grid or not d_grid:
        raise ValueError("empty benchmark grid")
    timings: list[TimingRow] = []
    fits: dict[int, dict[str, float]] = {}
    for d in d_grid:
        data = generate_synthetic(rows, d, 0.1, seed)
        for n in n_grid:
            shards = split_horizontal(data, n, seed)
            config = ProtocolConfig(
                n_parties=n,
                privacy=PrivacyParams(epsilon, alpha=float(n)),
                key_bits=key_bits,
                master_seed=seed,
                transport=transport,
                capture_payloads=False,
            )
            _, transcript = run_protocol(config, shards)
            ph = transcript.phase_ms
            timings.append(
                TimingRow(
                    n=n, d=d, rows=rows, key_bits=key_bits,
                    keygen_ms=ph["keygen_ms"], minmax_ms=ph["minmax_ms"],
                    regression_ms=ph["regression_ms"],
                    reconstruct_ms=ph["reconstruct_ms"], total_ms=ph["total_ms"],
                )
            )
        if len(n_grid) >= 2:
            slope, intercept, r2 = fit_linear(
                n_grid, [t.regression_ms for t in timings if t.d == d]
            )
            fits[d] = {"slope_ms_per_party": slope, "intercept_ms": intercept, "r_squared": r2}
    return timings, fits


# -- CSV output -------------------------------------------------------------------

_RESULT_FIELDS = (
    "mode", "epsilon", "p", "alpha", "n", "mean_mse", "mse_stddev",
    "keygen_ms", "minmax_ms", "regression_ms", "total_ms",
)
_TIMING_FIELDS = (
    "n", "d", "rows", "key_bits",
    "keygen_ms", "minmax_ms", "regression_ms", "reconstruct_ms", "total_ms",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def write_results_csv(rows: list[ResultRow], path: str) -> None:
    """One header line plus one line per row, reals at 9 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_RESULT_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row.mode, _fmt(row.epsilon), _fmt(row.p), _fmt(row.alpha), row.n,
                    _fmt(row.mean_mse), _fmt(row.mse_stddev),
                    _fmt(row.timing.get("keygen_ms", 0.0)),
                    _fmt(row.timing.get("minmax_ms", 0.0)),
                    _fmt(row.timing.get("regression_ms", 0.0)),
                    _fmt(row.timing.get("total_ms", 0.0)),
                ]
            )


def read_results_csv(path: str) -> list[ResultRow]:
    """Parse a file produced by :func:`write_results_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != _RESULT_FIELDS:
            raise CsvFormatError(f"{path}: unexpected results header {header}")
        out = []
        for row in reader:
            out.append(
                ResultRow(
                    mode=row[0], epsilon=float(row[1]), p=float(row[2]),
                    alpha=float(row[3]), n=int(row[4]), mean_mse=float(row[5]),
                    mse_stddev=float(row[6]),
                    timing={
                        "keygen_ms": float(row[7]), "minmax_ms": float(row[8]),
                        "regression_ms": float(row[9]), "total_ms": float(row[10]),
                    },
                )
            )
    return out


def write_timing_csv(rows: list[TimingRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TIMING_FIELDS)
        for t in rows:
            writer.writerow([_fmt(getattr(t, f)) for f in _TIMING_FIELDS])
