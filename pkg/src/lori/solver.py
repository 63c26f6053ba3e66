"""Alternating minimization for the nuclear-norm penalized Poisson model.

Each outer iteration updates the offset in closed form, refits the
covariate coefficients as a Poisson regression (damped Newton), and takes
one proximal-gradient step on the interaction matrix with a backtracking
step size that restarts at 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import (
    ConvergenceError,
    DegenerateOffsetError,
    NumericRangeError,
    RankDeficiencyError,
    ValidationError,
)
from .linalg import (
    effective_rank,
    interaction_projector,
    nuclear_norm,
    singular_value_soft_threshold,
)
from .model import (
    DEFAULT_EXP_CAP,
    CountTable,
    CovariateSet,
    ModelParams,
    build_natural_params,
    main_effects,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules and numerical safeguards.

    Parameters
    ----------
    tol : float
        Stop when the relative decrease of the penalized objective over one
        outer iteration falls to ``tol`` or below.
    max_outer_iters : int
        Cap on outer iterations; hitting it yields ``converged=False``.
    max_backtracks : int
        Maximum number of step halvings in the interaction update.
    glm_tol : float
        Newton stopping rule for the regression sub-problem: the sup-norm of
        the gradient divided by ``max(1, sum of observed counts)``.
    glm_max_iters : int
        Newton iteration cap for the regression sub-problem.
    exp_cap : float
        Natural parameters above this value raise :class:`NumericRangeError`.
    clamp : float, optional
        If set, interaction steps producing ``|x| > clamp`` are rejected.
    center_interaction : bool
        Constrain ``theta`` to be doubly centered. ``False`` gives a plain
        low-rank fit in which ``theta`` may carry main effects too.
    rank_tol : float
        Singular-value cutoff used to report the effective rank.
    """

    tol: float = 1e-6
    max_outer_iters: int = 500
    max_backtracks: int = 30
    glm_tol: float = 1e-9
    glm_max_iters: int = 100
    exp_cap: float = DEFAULT_EXP_CAP
    clamp: Optional[float] = None
    center_interaction: bool = True
    rank_tol: float = 1e-6

    def __post_init__(self):
        if self.tol <= 0 or self.glm_tol <= 0 or self.rank_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_outer_iters < 1 or self.max_backtracks < 1 or self.glm_max_iters < 1:
            raise ValidationError("iteration caps must be at least 1")
        if self.clamp is not None and self.clamp <= 0:
            raise ValidationError("clamp must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    lam: float
    objective_trace: tuple
    n_iters: int
    converged: bool
    effective_rank: int
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def natural_params(self, cov: CovariateSet) -> np.ndarray:
        return build_natural_params(self.params, cov)


def _project(m: np.ndarray, config: SolverConfig) -> np.ndarray:
    return interaction_projector(m) if config.center_interaction else m


def _validate(table: CountTable, cov: CovariateSet) -> None:
    n, p = table.shape
    if (cov.n, cov.p) != (n, p):
        raise ValidationError(f"covariates describe a {cov.n}x{cov.p} table but counts are {n}x{p}")
    if cov.k1 + cov.k2 + 1 > table.n_observed:
        raise ValidationError("more regression coefficients than observed cells")


def _observed_design(table: CountTable, cov: CovariateSet, intercept: bool) -> np.ndarray:
    ii, jj = np.nonzero(table.mask)
    blocks = [cov.R[ii], cov.C[jj]]
    if intercept:
        blocks.insert(0, np.ones((ii.size, 1)))
    return np.hstack(blocks)


def _check_design(design: np.ndarray) -> None:
    if design.shape[1] and np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficiencyError("covariate design is rank deficient on the observed cells")


def _poisson_newton(y, design, offset, start, config: SolverConfig, checked: bool = False):
    """Minimize ``sum(exp(o + D b) - y (o + D b))`` over ``b`` by damped Newton."""
    k = design.shape[1]
    coef = np.array(start, dtype=float)
    if k == 0:
        return coef
    if not checked:
        _check_design(design)
    scale = max(1.0, float(y.sum()))

    def objective(c):
        eta = offset + design @ c
        if eta.max() > config.exp_cap:
            return np.inf, eta
        return float(np.sum(np.exp(eta) - y * eta)), eta

    f, eta = objective(coef)
    if not np.isfinite(f):
        raise NumericRangeError("starting point of the regression exceeds the exponential cap")
    for _ in range(config.glm_max_iters):
        mu = np.exp(eta)
        grad = design.T @ (mu - y)
        if np.max(np.abs(grad)) <= config.glm_tol * scale:
            return coef
        hess = design.T @ (design * mu[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular information matrix in the regression update") from exc
        decrement = float(grad @ step)
        if decrement <= 1e-13 * max(1.0, abs(f)):
            return coef
        t = 1.0
        for _ in range(60):
            cand = coef - t * step
            f_new, eta_new = objective(cand)
            if f_new <= f:
                break
            t *= 0.5
        else:
            raise ConvergenceError("regression line search failed")
        coef, f, eta = cand, f_new, eta_new
    mu = np.exp(eta)
    grad = design.T @ (mu - y)
    if np.max(np.abs(grad)) <= 1e3 * config.glm_tol * scale:
        return coef
    raise ConvergenceError(f"regression did not converge in {config.glm_max_iters} iterations")


def update_offset(table: CountTable, cov: CovariateSet, params: ModelParams) -> float:
    """Closed-form offset: ``log(sum_obs Y / sum_obs exp(x - mu))``."""
    total = float(table.values[table.mask].sum())
    if total <= 0:
        raise DegenerateOffsetError("all observed counts are zero; the offset has no finite optimum")
    s = (build_natural_params(params, cov) - params.mu)[table.mask]
    top = s.max()
    return float(np.log(total) - top - np.log(np.sum(np.exp(s - top))))


def update_coefficients(table: CountTable, cov: CovariateSet, params: ModelParams, config: SolverConfig = None):
    """Poisson regression of the observed counts on ``[R_i, C_j]`` with offset ``mu + theta``."""
    config = config or SolverConfig()
    if cov.k1 + cov.k2 == 0:
        return np.zeros(0), np.zeros(0)
    _validate(table, cov)
    design = _observed_design(table, cov, intercept=False)
    offset = (params.mu + params.theta)[table.mask]
    y = table.values[table.mask].astype(float)
    start = np.concatenate([params.alpha, params.beta])
    coef = _poisson_newton(y, design, offset, start, config)
    return coef[: cov.k1], coef[cov.k1 :]


def fit_null_model(table: CountTable, cov: CovariateSet, config: SolverConfig = None) -> ModelParams:
    """Main-effects-only fit (``theta = 0``): a Poisson regression with intercept."""
    config = config or SolverConfig()
    _validate(table, cov)
    y = table.values[table.mask].astype(float)
    if y.sum() <= 0:
        raise DegenerateOffsetError("all observed counts are zero; the offset has no finite optimum")
    design = _observed_design(table, cov, intercept=True)
    start = np.zeros(design.shape[1])
    start[0] = np.log(y.mean())
    coef = _poisson_newton(y, design, np.zeros(y.size), start, config)
    n, p = table.shape
    return ModelParams(coef[0], coef[1 : 1 + cov.k1], coef[1 + cov.k1 :], np.zeros((n, p)))


class _Workspace:
    """Precomputed observed-cell quantities shared by the steps of one fit."""

    def __init__(self, table: CountTable, cov: CovariateSet, lam: float, config: SolverConfig):
        self.table = table
        self.cov = cov
        self.lam = float(lam)
        self.config = config
        self.mask = table.mask
        self.y = table.values.astype(float)
        self.y_obs = self.y[self.mask]
        self.total = float(self.y_obs.sum())
        self.design = _observed_design(table, cov, intercept=False)
        _check_design(self.design)

    def loss(self, x: np.ndarray) -> float:
        """Data fit, or ``inf`` outside the exponential cap / clamp."""
        xo = x[self.mask]
        if not np.all(np.isfinite(xo)) or xo.max() > self.config.exp_cap:
            return np.inf
        if self.config.clamp is not None and np.max(np.abs(x)) > self.config.clamp:
            return np.inf
        return float(np.sum(np.exp(xo) - self.y_obs * xo))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return _project(np.where(self.mask, np.exp(np.where(self.mask, x, 0.0)) - self.y, 0.0), self.config)

    def candidate(self, theta, main, grad, tau):
        """Thresholded gradient step; returns ``(theta, data fit, penalty)``."""
        new, norm = singular_value_soft_threshold(theta - tau * grad, tau * self.lam, return_norm=True)
        new = _project(new, self.config)
        return new, self.loss(main + new), self.lam * norm


def update_interaction_step(
    table: CountTable,
    cov: CovariateSet,
    params: ModelParams,
    lam: float,
    tau: float,
    config: SolverConfig = None,
):
    """One proximal-gradient candidate for ``theta`` at step size ``tau``.

    The gradient of the data fit is double centered and the singular values
    of ``theta - tau * gradient`` are shrunk by ``tau * lam``. Returns
    ``(theta, accepted)`` where ``accepted`` tells whether the candidate does
    not increase the penalized objective.
    """
    config = config or SolverConfig()
    if tau <= 0:
        raise ValidationError("step size must be positive")
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    _validate(table, cov)
    ws = _Workspace(table, cov, lam, config)
    main = main_effects(params, cov)
    x = main + params.theta
    current = ws.loss(x) + lam * nuclear_norm(params.theta)
    theta, loss, penalty = ws.candidate(params.theta, main, ws.gradient(x), tau)
    return theta, bool(loss + penalty <= current)


def fit(
    table: CountTable,
    cov: CovariateSet,
    lam: float,
    config: SolverConfig = None,
    init: Optional[ModelParams] = None,
) -> FitResult:
    """Minimize the penalized objective at a fixed ``lam``.

    Starts from ``init`` or, by default, from the main-effects-only fit with
    ``theta = 0``. Every outer iteration is a monotone block update: exact
    offset, Newton-solved coefficients, then a backtracked proximal step on
    ``theta`` starting from unit step size.
    """
    config = config or SolverConfig()
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    _validate(table, cov)
    ws = _Workspace(table, cov, lam, config)
    if init is None:
        params = fit_null_model(table, cov, config)
    else:
        if init.theta.shape != table.shape:
            raise ValidationError("initial theta has the wrong shape")
        if init.alpha.shape != (cov.k1,) or init.beta.shape != (cov.k2,):
            raise ValidationError("initial coefficients do not match the covariates")
        params = init.replace(theta=_project(np.asarray(init.theta), config))
    mu, coef, theta = params.mu, np.concatenate([params.alpha, params.beta]), np.array(params.theta)

    def effects(coef):
        return (ws.cov.R @ coef[: cov.k1])[:, None] + (ws.cov.C @ coef[cov.k1 :])[None, :]

    fx = effects(coef)
    penalty = lam * nuclear_norm(theta) if lam > 0 else 0.0
    current = ws.loss(mu + fx + theta) + penalty
    if not np.isfinite(current):
        raise NumericRangeError("initial natural parameters exceed the exponential cap")
    trace = [current]
    converged = False
    n_iters = 0
    for n_iters in range(1, config.max_outer_iters + 1):
        previous = current

        if ws.total <= 0:
            raise DegenerateOffsetError("all observed counts are zero; the offset has no finite optimum")
        s = (fx + theta)[ws.mask]
        top = s.max()
        new_mu = float(np.log(ws.total) - top - np.log(np.sum(np.exp(s - top))))
        value = ws.loss(new_mu + fx + theta) + penalty
        if value <= current:
            mu, current = new_mu, value

        if coef.size:
            offset = (mu + theta)[ws.mask]
            new_coef = _poisson_newton(ws.y_obs, ws.design, offset, coef, config, checked=True)
            new_fx = effects(new_coef)
            value = ws.loss(mu + new_fx + theta) + penalty
            if value <= current:
                coef, fx, current = new_coef, new_fx, value

        main = mu + fx
        grad = ws.gradient(main + theta)
        tau = 1.0
        for _ in range(config.max_backtracks + 1):
            cand, loss, cand_penalty = ws.candidate(theta, main, grad, tau)
            if loss + cand_penalty <= current:
                theta, penalty, current = cand, cand_penalty, loss + cand_penalty
                break
            tau *= 0.5

        trace.append(current)
        if previous - current <= config.tol * max(1.0, abs(previous)):
            converged = True
            break
    if not converged:
        logger.warning("fit at lambda=%g stopped after %d iterations without converging", lam, n_iters)
    params = ModelParams(mu, coef[: cov.k1], coef[cov.k1 :], theta)
    return FitResult(
        params=params,
        lam=float(lam),
        objective_trace=tuple(trace),
        n_iters=n_iters,
        converged=converged,
        effective_rank=effective_rank(theta, config.rank_tol),
        config=config,
    )


def fit_path(
    table: CountTable,
    cov: CovariateSet,
    lambdas: Sequence[float],
    config: SolverConfig = None,
) -> list:
    """Fit a strictly decreasing grid of ``lambdas``, warm-starting each fit at the previous solution."""
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValidationError("empty lambda grid")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValidationError("lambda grid must be strictly decreasing")
    results = []
    init = None
    for lam in lambdas:
        res = fit(table, cov, lam, config, init=init)
        results.append(res)
        init = res.params
    return results
