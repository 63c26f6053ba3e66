"""Choosing the regularization parameter.

``null_threshold_stat`` returns the smallest ``lambda`` for which the
penalized fit has a zero interaction matrix. Its distribution under a
main-effects-only model, approximated by a parametric bootstrap, gives the
quantile universal threshold (QUT) and an independence test that accounts
for covariates. Cross-validation on erased observed cells is provided as a
slower alternative.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import LoriError, NumericalError, ValidationError
from .linalg import interaction_projector, operator_norm
from .model import CountTable, CovariateSet, ModelParams, build_natural_params, data_fit_gradient
from .solver import SolverConfig, fit_null_model, fit_path

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class SelectionReport:
    method: str
    chosen_lambda: float
    lambda0: float
    epsilon: float
    seed: int
    bootstrap_stats: Optional[tuple] = None
    cv_grid: Optional[tuple] = None
    n_failures: int = 0

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "chosen_lambda": self.chosen_lambda,
            "lambda0": self.lambda0,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "n_failures": self.n_failures,
        }
        if self.bootstrap_stats is not None:
            d["bootstrap_stats"] = list(self.bootstrap_stats)
        if self.cv_grid is not None:
            d["cv_grid"] = [{"lambda": lam, "heldout_error": err} for lam, err in self.cv_grid]
        return d


def default_n_jobs() -> int:
    """Worker count from ``LORI_NUM_THREADS`` (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("LORI_NUM_THREADS", "1")))
    except ValueError:
        return 1


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate ``index``; unaffected by scheduling order."""
    return np.random.default_rng([int(seed), int(index)])


def _map(func, items, n_jobs):
    n_jobs = default_n_jobs() if n_jobs is None else n_jobs
    if n_jobs <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, items))


def null_gradient(table: CountTable, cov: CovariateSet, config: SolverConfig = None, null: ModelParams = None):
    """Data-fit gradient at the main-effects-only fit, projected onto the interaction space."""
    config = config or SolverConfig()
    null = null if null is not None else fit_null_model(table, cov, config)
    grad = data_fit_gradient(table, build_natural_params(null, cov), config.exp_cap)
    return interaction_projector(grad) if config.center_interaction else grad


def null_threshold_stat(table: CountTable, cov: CovariateSet, config: SolverConfig = None) -> float:
    """Operator norm of the projected gradient at the main-effects-only fit.

    Any ``lambda`` at or above this value yields a zero interaction matrix.
    """
    return operator_norm(null_gradient(table, cov, config))


def upper_quantile(stats: Sequence[float], epsilon: float) -> float:
    """Order statistic ``ceil((1 - epsilon) * B)`` (1-based) of the sorted values."""
    stats = np.sort(np.asarray(stats, dtype=float))
    k = math.ceil((1.0 - epsilon) * stats.size - 1e-9)
    return float(stats[min(max(k, 1), stats.size) - 1])


def _bootstrap_stat(table, cov, means, config, seed, b):
    rng = replicate_rng(seed, b)
    draw = rng.poisson(means)
    try:
        return null_threshold_stat(CountTable(draw, table.mask, table.row_names, table.col_names), cov, config)
    except LoriError as exc:
        logger.debug("bootstrap replicate %d failed: %s", b, exc)
        return None


def bootstrap_null_stats(
    table: CountTable,
    cov: CovariateSet,
    config: SolverConfig = None,
    B: int = 100,
    seed: int = 0,
    n_jobs: Optional[int] = None,
):
    """Null-threshold statistics of ``B`` tables simulated from the main-effects-only fit.

    The observation mask is reused as is. Returns ``(stats, n_failures, null_params)``.
    """
    config = config or SolverConfig()
    null = fit_null_model(table, cov, config)
    means = np.where(table.mask, np.exp(build_natural_params(null, cov)), 0.0)
    out = _map(lambda b: _bootstrap_stat(table, cov, means, config, seed, b), range(B), n_jobs)
    stats = [s for s in out if s is not None]
    failures = B - len(stats)
    if failures > MAX_FAILURE_RATE * B:
        raise NumericalError(f"{failures} of {B} bootstrap replicates failed; the null model may be degenerate")
    return stats, failures, null


def qut_select(
    table: CountTable,
    cov: CovariateSet,
    config: SolverConfig = None,
    epsilon: float = 0.05,
    B: int = 100,
    seed: int = 0,
    n_jobs: Optional[int] = None,
) -> SelectionReport:
    """Quantile universal threshold: upper ``epsilon`` quantile of the bootstrap null statistics."""
    if not 0 < epsilon < 1:
        raise ValidationError("epsilon must lie in (0, 1)")
    if B < 20:
        raise ValidationError("at least 20 bootstrap replicates are required")
    config = config or SolverConfig()
    stats, failures, null = bootstrap_null_stats(table, cov, config, B, seed, n_jobs)
    lam0 = operator_norm(null_gradient(table, cov, config, null))
    return SelectionReport(
        method="qut",
        chosen_lambda=upper_quantile(stats, epsilon),
        lambda0=lam0,
        epsilon=float(epsilon),
        seed=int(seed),
        bootstrap_stats=tuple(stats),
        n_failures=failures,
    )


def independence_test(
    table: CountTable,
    cov: CovariateSet,
    config: SolverConfig = None,
    epsilon: float = 0.05,
    B: int = 100,
    seed: int = 0,
    n_jobs: Optional[int] = None,
):
    """Test of ``theta = 0``: reject when the observed statistic exceeds the QUT.

    Returns ``(reject, lambda0, threshold)``.
    """
    report = qut_select(table, cov, config, epsilon, B, seed, n_jobs)
    return bool(report.lambda0 > report.chosen_lambda), report.lambda0, report.chosen_lambda


def erase_cells(table: CountTable, fraction: float, rng: np.random.Generator, max_tries: int = 100) -> np.ndarray:
    """Mask of observed cells that stay observed after erasing ``fraction`` of them.

    Redraws until every row and column keeps at least one observed cell.
    """
    obs = np.flatnonzero(table.mask.ravel())
    n_erase = int(round(fraction * obs.size))
    for _ in range(max_tries):
        erased = rng.choice(obs, size=n_erase, replace=False)
        keep = table.mask.copy().ravel()
        keep[erased] = False
        keep = keep.reshape(table.shape)
        if keep.any(axis=1).all() and keep.any(axis=0).all():
            return keep
    raise ValidationError("could not build a cross-validation fold leaving every row and column observed")


def _cv_fold(table, cov, lambdas, fraction, config, seed, fold):
    rng = replicate_rng(seed, fold)
    keep = erase_cells(table, fraction, rng)
    held = table.mask & ~keep
    path = fit_path(table.with_mask(keep), cov, lambdas, config)
    y = table.values[held].astype(float)
    return [float(np.mean((np.exp(build_natural_params(r.params, cov)[held]) - y) ** 2)) for r in path]


def cross_validate(
    table: CountTable,
    cov: CovariateSet,
    lambdas: Sequence[float],
    k_erase_fraction: float = 0.2,
    n_folds: int = 5,
    config: SolverConfig = None,
    seed: int = 0,
    n_jobs: Optional[int] = None,
) -> SelectionReport:
    """Choose ``lambda`` minimizing the mean squared error on erased observed cells.

    Each fold erases an independent random ``k_erase_fraction`` of the
    observed cells and fits the whole (descending) path on the rest. Ties
    go to the larger ``lambda``.
    """
    if not 0 < k_erase_fraction < 1:
        raise ValidationError("k_erase_fraction must lie in (0, 1)")
    if n_folds < 1:
        raise ValidationError("n_folds must be at least 1")
    config = config or SolverConfig()
    grid = sorted({float(v) for v in lambdas}, reverse=True)
    if not grid or grid[-1] <= 0:
        raise ValidationError("lambda grid must be non-empty and positive")
    errors = np.array(_map(lambda f: _cv_fold(table, cov, grid, k_erase_fraction, config, seed, f), range(n_folds), n_jobs))
    mean_err = errors.mean(axis=0)
    if not np.all(np.isfinite(mean_err)):
        raise NumericalError("non-finite held-out error")
    best = int(np.argmin(mean_err))  # grid is descending, so argmin's first hit is the largest lambda
    return SelectionReport(
        method="cv",
        chosen_lambda=grid[best],
        lambda0=null_threshold_stat(table, cov, config),
        epsilon=float(k_erase_fraction),
        seed=int(seed),
        cv_grid=tuple(zip(grid, mean_err.tolist())),
    )


def default_cv_grid(lambda0: float, n: int = 10, ratio: float = 0.01) -> list:
    """Geometric grid from ``1.01 * lambda0`` down to ``ratio * lambda0``."""
    return list(np.geomspace(1.01 * lambda0, ratio * lambda0, n))
