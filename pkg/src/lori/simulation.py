"""Synthetic data and benchmark harness.

Data follow the Poisson log-linear model with Gaussian covariates, a
fixed main-effects part and a random low-rank interaction scaled to a
target ratio ``||theta||_F / ||main effects||_F``. The benchmarks compare
the penalized fit (regularization chosen by QUT) with a main-effects-only
Poisson regression, a covariate-free low-rank fit, and column-mean
imputation.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import LoriError, NumericRangeError, ValidationError
from .linalg import interaction_projector
from .model import CountTable, CovariateSet, ModelParams, build_natural_params
from .selection import _map, qut_select
from .solver import SolverConfig, fit, fit_null_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimSpec:
    """Parameters of one simulation design.

    Covariates are drawn from a zero-mean Gaussian whose covariance is
    block diagonal: blocks of ``block_size`` columns with correlation
    ``block_corr`` and marginal standard deviation ``covariate_sd``.
    """

    n: int = 100
    p: int = 20
    mu_star: float = 1.0
    alpha_star: tuple = (2.0, 0.0, 0.0)
    beta_star: tuple = (-2.0, 0.0, 0.0, 0.0)
    theta_rank: int = 5
    tau_ratio: float = 0.0
    miss_prob: float = 0.0
    covariate_sd: float = 0.5
    block_size: int = 2
    block_corr: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 2:
            raise ValidationError("n and p must be at least 2")
        if not 0 <= self.miss_prob < 1:
            raise ValidationError("miss_prob must lie in [0, 1)")
        if self.tau_ratio < 0:
            raise ValidationError("tau_ratio must be nonnegative")
        if not 0 <= self.theta_rank <= min(self.n - 1, self.p - 1):
            raise ValidationError("theta_rank must lie in [0, min(n-1, p-1)]")
        if self.covariate_sd <= 0 or self.block_size < 1 or not -1 < self.block_corr < 1:
            raise ValidationError("invalid covariate covariance parameters")

    @property
    def k1(self) -> int:
        return len(self.alpha_star)

    @property
    def k2(self) -> int:
        return len(self.beta_star)


def derive_seed(seed: int, *index: int) -> int:
    """Deterministic child seed for a (seed, index...) pair."""
    return int(np.random.SeedSequence([int(seed), *map(int, index)]).generate_state(1)[0])


def block_covariance(k: int, block_size: int, corr: float, sd: float) -> np.ndarray:
    cov = np.zeros((k, k))
    for start in range(0, k, block_size):
        stop = min(start + block_size, k)
        cov[start:stop, start:stop] = corr
    np.fill_diagonal(cov, 1.0)
    return sd**2 * cov


def _gaussian(rng, rows, k, spec):
    if k == 0:
        return np.zeros((rows, 0))
    cov = block_covariance(k, spec.block_size, spec.block_corr, spec.covariate_sd)
    return rng.multivariate_normal(np.zeros(k), cov, size=rows, method="cholesky")


def simulate_dataset(spec: SimSpec, exp_cap: float = 30.0):
    """Draw ``(table, covariates, truth)`` for ``spec``.

    ``truth`` is expressed on the standardized covariate scale of the
    returned :class:`CovariateSet`, so ``build_natural_params(truth, cov)``
    is the true log-mean matrix.
    """
    rng = np.random.default_rng([spec.seed, 0])
    R = _gaussian(rng, spec.n, spec.k1, spec)
    C = _gaussian(rng, spec.p, spec.k2, spec)
    alpha = np.asarray(spec.alpha_star, dtype=float)
    beta = np.asarray(spec.beta_star, dtype=float)
    x0 = spec.mu_star + (R @ alpha)[:, None] + (C @ beta)[None, :]

    theta = np.zeros((spec.n, spec.p))
    if spec.tau_ratio > 0 and spec.theta_rank > 0:
        u = rng.standard_normal((spec.n, spec.theta_rank))
        v = rng.standard_normal((spec.p, spec.theta_rank))
        theta = interaction_projector(u @ v.T)
        theta *= spec.tau_ratio * np.linalg.norm(x0) / np.linalg.norm(theta)
    x_star = x0 + theta
    if x_star.max() > exp_cap:
        raise NumericRangeError(f"simulated log-mean {x_star.max():.3g} exceeds the exponential cap")

    y = rng.poisson(np.exp(x_star))
    table = CountTable(y, np.ones_like(y, dtype=bool))
    if spec.miss_prob > 0:
        table = apply_mcar_mask(table, spec.miss_prob, derive_seed(spec.seed, 1))
    cov = CovariateSet.standardize(R, C, n=spec.n, p=spec.p)
    mu_s, alpha_s, beta_s = cov.to_standardized_scale(spec.mu_star, alpha, beta)
    return table, cov, ModelParams(mu_s, alpha_s, beta_s, theta)


def apply_mcar_mask(table: CountTable, miss_prob: float, seed: int, max_tries: int = 1000) -> CountTable:
    """Hide each cell independently with probability ``miss_prob``.

    The draw is repeated until every row and column keeps an observed cell.
    """
    if not 0 <= miss_prob < 1:
        raise ValidationError("miss_prob must lie in [0, 1)")
    if miss_prob == 0:
        return table
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        mask = table.mask & (rng.random(table.shape) >= miss_prob)
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return table.with_mask(mask)
    raise ValidationError(f"missing probability {miss_prob} leaves empty rows or columns after {max_tries} draws")


def baseline_column_mean(table: CountTable) -> np.ndarray:
    """Observed counts with every masked cell replaced by its column's observed mean."""
    y = table.values.astype(float)
    n_obs = table.mask.sum(axis=0)
    if np.any(n_obs == 0):
        raise ValidationError("column mean imputation needs an observed cell in every column")
    means = np.where(table.mask, y, 0.0).sum(axis=0) / n_obs
    return np.where(table.mask, y, means[None, :])


def _coef_rmse(cov, params, truth) -> float:
    _, a, b = cov.to_original_scale(params.mu, params.alpha, params.beta)
    _, a0, b0 = cov.to_original_scale(truth.mu, truth.alpha, truth.beta)
    return float(np.sqrt(np.sum((a - a0) ** 2) + np.sum((b - b0) ** 2)))


def _fit_diagnostics(res) -> dict:
    trace = np.asarray(res.objective_trace)
    theta = res.params.theta
    return {
        "max_trace_increase": float(np.max(np.diff(trace), initial=0.0)),
        "max_margin_sum": float(max(np.abs(theta.sum(axis=0)).max(), np.abs(theta.sum(axis=1)).max())),
        "converged": bool(res.converged),
    }


@dataclass
class BenchmarkReport:
    """Per-replicate records plus a summary, serializable as CSV and JSON."""

    kind: str
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    n_failures: int = 0
    settings: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        if not self.records:
            open(path, "w").close()
            return
        keys = list(self.records[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(keys)
            for rec in self.records:
                writer.writerow([_fmt(rec[k]) for k in keys])

    def to_json(self, path) -> None:
        payload = {"kind": self.kind, "summary": self.summary, "n_failures": self.n_failures, "settings": self.settings}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _estimation_rep(spec, rep, config, epsilon, n_boot):
    rep_spec = replace(spec, seed=derive_seed(spec.seed, rep))
    table, cov, truth = simulate_dataset(rep_spec, config.exp_cap)
    x_star = build_natural_params(truth, cov)
    x_norm = np.linalg.norm(x_star)
    qseed = derive_seed(rep_spec.seed, 2)

    qut = qut_select(table, cov, config, epsilon, n_boot, qseed, n_jobs=1)
    lori = fit(table, cov, qut.chosen_lambda, config)
    glm = fit_null_model(table, cov, config)

    plain = cov.without_covariates()
    plain_cfg = replace(config, center_interaction=False)
    qut_plain = qut_select(table, plain, plain_cfg, epsilon, n_boot, qseed, n_jobs=1)
    lrm = fit(table, plain, qut_plain.chosen_lambda, plain_cfg)

    rows = []
    for method, params, c, res, lam in (
        ("lori", lori.params, cov, lori, qut.chosen_lambda),
        ("glm", glm, cov, None, np.inf),
        ("lrm", lrm.params, plain, lrm, qut_plain.chosen_lambda),
    ):
        row = {
            "tau": float(spec.tau_ratio),
            "rep": rep,
            "method": method,
            "coef_rmse": _coef_rmse(cov, params, truth) if method != "lrm" else float("nan"),
            "rel_rmse": float(np.linalg.norm(build_natural_params(params, c) - x_star) / x_norm),
            "lambda": float(lam),
        }
        row.update(_fit_diagnostics(res) if res is not None else
                   {"max_trace_increase": 0.0, "max_margin_sum": 0.0, "converged": True})
        rows.append(row)
    return rows


def _summarize(records, group_keys, metrics):
    groups = {}
    for rec in records:
        groups.setdefault(tuple(rec[k] for k in group_keys), []).append(rec)
    out = []
    for key in sorted(groups):
        recs = groups[key]
        entry = dict(zip(group_keys, key))
        entry["n"] = len(recs)
        for m in metrics:
            vals = np.array([r[m] for r in recs], dtype=float)
            if np.all(np.isnan(vals)):
                continue
            entry[f"{m}_mean"] = float(np.mean(vals))
            entry[f"{m}_sd"] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            entry[f"{m}_median"] = float(np.median(vals))
        out.append(entry)
    return out


def run_estimation_benchmark(
    specs: Sequence[SimSpec],
    reps: int = 20,
    config: SolverConfig = None,
    epsilon: float = 0.05,
    n_boot: int = 100,
    n_jobs: Optional[int] = None,
) -> BenchmarkReport:
    """Coefficient RMSE and relative RMSE of the log-mean for each design in ``specs``.

    Methods: ``lori`` (penalized fit at the QUT), ``glm`` (main effects only)
    and ``lrm`` (low-rank fit without covariates or centering, at its own QUT).
    """
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    config = config or SolverConfig()
    tasks = [(spec, rep) for spec in specs for rep in range(reps)]

    def run(task):
        spec, rep = task
        try:
            return _estimation_rep(spec, rep, config, epsilon, n_boot)
        except LoriError as exc:
            logger.warning("estimation replicate tau=%g rep=%d failed: %s", spec.tau_ratio, rep, exc)
            return None

    results = _map(run, tasks, n_jobs)
    records = [row for rows in results if rows is not None for row in rows]
    return BenchmarkReport(
        kind="estimation",
        records=records,
        summary={"groups": _summarize(records, ("tau", "method"), ("coef_rmse", "rel_rmse"))},
        n_failures=sum(r is None for r in results),
        settings={"reps": reps, "epsilon": epsilon, "n_boot": n_boot, "specs": [asdict(s) for s in specs]},
    )


def _imputation_rep(spec, frac, rep, config, epsilon, n_boot):
    rep_spec = replace(spec, seed=derive_seed(spec.seed, rep), miss_prob=0.0)
    full, cov, _ = simulate_dataset(rep_spec, config.exp_cap)
    table = apply_mcar_mask(full, frac, derive_seed(rep_spec.seed, 3, int(round(frac * 1000))))
    hidden = full.mask & ~table.mask
    y = full.values[hidden].astype(float)

    qut = qut_select(table, cov, config, epsilon, n_boot, derive_seed(rep_spec.seed, 2), n_jobs=1)
    res = fit(table, cov, qut.chosen_lambda, config)
    lori_pred = np.exp(build_natural_params(res.params, cov))[hidden]
    mean_pred = baseline_column_mean(table)[hidden]
    row = {
        "miss_frac": float(frac),
        "rep": rep,
        "lori_error": float(np.mean((y - lori_pred) ** 2)),
        "colmean_error": float(np.mean((y - mean_pred) ** 2)),
        "lambda": float(qut.chosen_lambda),
    }
    row["gap"] = row["colmean_error"] - row["lori_error"]
    row.update(_fit_diagnostics(res))
    return row


def run_imputation_benchmark(
    spec: SimSpec,
    miss_fracs: Sequence[float] = (0.2, 0.4, 0.6, 0.8),
    reps: int = 20,
    config: SolverConfig = None,
    epsilon: float = 0.05,
    n_boot: int = 100,
    n_jobs: Optional[int] = None,
) -> BenchmarkReport:
    """Mean squared error on hidden cells for QUT-penalized fits versus column means.

    ``gap`` is the column-mean error minus the penalized-fit error.
    """
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    config = config or SolverConfig()
    tasks = [(f, rep) for f in miss_fracs for rep in range(reps)]

    def run(task):
        frac, rep = task
        try:
            return _imputation_rep(spec, frac, rep, config, epsilon, n_boot)
        except LoriError as exc:
            logger.warning("imputation replicate frac=%g rep=%d failed: %s", frac, rep, exc)
            return None

    results = _map(run, tasks, n_jobs)
    records = [r for r in results if r is not None]
    return BenchmarkReport(
        kind="imputation",
        records=records,
        summary={"groups": _summarize(records, ("miss_frac",), ("lori_error", "colmean_error", "gap"))},
        n_failures=sum(r is None for r in results),
        settings={"reps": reps, "epsilon": epsilon, "n_boot": n_boot, "spec": asdict(spec), "miss_fracs": list(miss_fracs)},
    )
