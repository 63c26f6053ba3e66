"""Data containers and the Poisson data-fit term.

The log-mean of cell ``(i, j)`` is modelled as::

    x_ij = mu + R[i] @ alpha + C[j] @ beta + theta_ij

with ``theta`` doubly centered. Only observed cells (``mask == True``)
enter the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import NumericRangeError, ValidationError
from .linalg import nuclear_norm

DEFAULT_EXP_CAP = 30.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CountTable:
    """Nonnegative integer counts with an explicit observation mask.

    Masked-out cells are stored as 0 and never read by the loss.
    """

    values: np.ndarray
    mask: np.ndarray
    row_names: tuple = ()
    col_names: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"counts must be a non-empty 2-d array, got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValidationError(f"mask shape {mask.shape} does not match counts {values.shape}")
        if not mask.any():
            raise ValidationError("count table has no observed cell")
        obs = values[mask]
        if not np.all(np.isfinite(obs)):
            raise ValidationError("observed counts must be finite")
        if np.any(obs < 0) or np.any(obs != np.round(obs)):
            raise ValidationError("observed counts must be nonnegative integers")
        clean = np.where(mask, values, 0).astype(np.int64)
        n, p = clean.shape
        row_names = tuple(self.row_names) or tuple(f"r{i + 1}" for i in range(n))
        col_names = tuple(self.col_names) or tuple(f"c{j + 1}" for j in range(p))
        if len(row_names) != n or len(col_names) != p:
            raise ValidationError("row/column name lists do not match table dimensions")
        object.__setattr__(self, "values", _frozen(clean))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "row_names", row_names)
        object.__setattr__(self, "col_names", col_names)

    @classmethod
    def from_array(cls, y, row_names=(), col_names=()) -> "CountTable":
        """Build a table from a float array where NaN marks a missing cell."""
        y = np.asarray(y, dtype=float)
        mask = ~np.isnan(y)
        return cls(np.where(mask, y, 0.0), mask, row_names, col_names)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def with_mask(self, mask: np.ndarray) -> "CountTable":
        """Return a copy restricted to ``mask`` (must be a subset of the current mask)."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask & ~self.mask):
            raise ValidationError("new mask reveals cells that are not observed")
        return CountTable(self.values, mask, self.row_names, self.col_names)

    def as_float(self) -> np.ndarray:
        """Counts as floats with NaN in masked cells."""
        return np.where(self.mask, self.values.astype(float), np.nan)

    def check_coverage(self) -> None:
        """Raise if some row or column has no observed cell."""
        empty_rows = np.flatnonzero(~self.mask.any(axis=1))
        empty_cols = np.flatnonzero(~self.mask.any(axis=0))
        if empty_rows.size:
            names = ", ".join(self.row_names[i] for i in empty_rows)
            raise ValidationError(f"rows with no observed cell: {names}")
        if empty_cols.size:
            names = ", ".join(self.col_names[j] for j in empty_cols)
            raise ValidationError(f"columns with no observed cell: {names}")


def standardize_columns(m: np.ndarray, what: str, names: Sequence[str]):
    m = np.asarray(m, dtype=float)
    if m.shape[1] == 0:
        return m, np.zeros(0), np.ones(0)
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{what} covariates contain missing or non-finite values")
    if m.shape[0] < 2:
        raise ValidationError(f"{what} covariates need at least two rows to be standardized")
    mean = m.mean(axis=0)
    scale = m.std(axis=0, ddof=1)
    const = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if const.size:
        bad = ", ".join(str(names[k]) for k in const)
        raise ValidationError(f"constant {what} covariate column(s): {bad}")
    return (m - mean) / scale, mean, scale


@dataclass(frozen=True, eq=False)
class CovariateSet:
    """Standardized row covariates ``R`` (n x K1) and column covariates ``C`` (p x K2).

    ``row_mean``/``row_scale`` and ``col_mean``/``col_scale`` record the
    transformation applied to the raw columns so that fitted coefficients
    can be reported on the original scale. Build instances with
    :meth:`standardize` or :meth:`empty`.
    """

    R: np.ndarray
    C: np.ndarray
    row_mean: np.ndarray
    row_scale: np.ndarray
    col_mean: np.ndarray
    col_scale: np.ndarray
    row_cov_names: tuple = ()
    col_cov_names: tuple = ()

    def __post_init__(self):
        for name in ("R", "C", "row_mean", "row_scale", "col_mean", "col_scale"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))
        if self.R.ndim != 2 or self.C.ndim != 2:
            raise ValidationError("covariate matrices must be 2-d")
        if self.row_mean.shape != (self.k1,) or self.row_scale.shape != (self.k1,):
            raise ValidationError("row standardization record has the wrong length")
        if self.col_mean.shape != (self.k2,) or self.col_scale.shape != (self.k2,):
            raise ValidationError("column standardization record has the wrong length")
        object.__setattr__(
            self, "row_cov_names", tuple(self.row_cov_names) or tuple(f"R{k + 1}" for k in range(self.k1))
        )
        object.__setattr__(
            self, "col_cov_names", tuple(self.col_cov_names) or tuple(f"C{k + 1}" for k in range(self.k2))
        )

    @classmethod
    def standardize(cls, R=None, C=None, n=None, p=None, row_cov_names=(), col_cov_names=()) -> "CovariateSet":
        """Center and scale raw covariates (sample standard deviation, ``ddof=1``).

        Either matrix may be ``None`` (then ``n`` or ``p`` gives the number of rows).
        """
        if R is None:
            if n is None:
                raise ValidationError("n is required when R is omitted")
            R = np.zeros((n, 0))
        if C is None:
            if p is None:
                raise ValidationError("p is required when C is omitted")
            C = np.zeros((p, 0))
        R = np.asarray(R, dtype=float)
        C = np.asarray(C, dtype=float)
        R = R[:, None] if R.ndim == 1 else R
        C = C[:, None] if C.ndim == 1 else C
        rn = tuple(row_cov_names) or tuple(f"R{k + 1}" for k in range(R.shape[1]))
        cn = tuple(col_cov_names) or tuple(f"C{k + 1}" for k in range(C.shape[1]))
        Rs, rm, rs = standardize_columns(R, "row", rn)
        Cs, cm, cs = standardize_columns(C, "column", cn)
        return cls(Rs, Cs, rm, rs, cm, cs, rn, cn)

    @classmethod
    def empty(cls, n: int, p: int) -> "CovariateSet":
        return cls(np.zeros((n, 0)), np.zeros((p, 0)), np.zeros(0), np.ones(0), np.zeros(0), np.ones(0))

    @property
    def k1(self) -> int:
        return self.R.shape[1]

    @property
    def k2(self) -> int:
        return self.C.shape[1]

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def without_covariates(self) -> "CovariateSet":
        return CovariateSet.empty(self.n, self.p)

    def to_original_scale(self, mu: float, alpha, beta):
        """Map coefficients fitted on standardized covariates to the raw scale."""
        alpha = np.asarray(alpha, dtype=float) / self.row_scale
        beta = np.asarray(beta, dtype=float) / self.col_scale
        mu = float(mu - self.row_mean @ alpha - self.col_mean @ beta)
        return mu, alpha, beta

    def to_standardized_scale(self, mu: float, alpha, beta):
        """Inverse of :meth:`to_original_scale`."""
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        mu = float(mu + self.row_mean @ alpha + self.col_mean @ beta)
        return mu, alpha * self.row_scale, beta * self.col_scale


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Offset ``mu``, coefficients ``alpha``/``beta`` and interaction ``theta``."""

    mu: float
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "alpha", _frozen(np.asarray(self.alpha, dtype=float).reshape(-1)))
        object.__setattr__(self, "beta", _frozen(np.asarray(self.beta, dtype=float).reshape(-1)))
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ValidationError("theta must be a 2-d array")
        object.__setattr__(self, "theta", _frozen(theta))

    @classmethod
    def zeros(cls, n: int, p: int, k1: int = 0, k2: int = 0) -> "ModelParams":
        return cls(0.0, np.zeros(k1), np.zeros(k2), np.zeros((n, p)))

    def replace(self, **changes) -> "ModelParams":
        fields = dict(mu=self.mu, alpha=self.alpha, beta=self.beta, theta=self.theta)
        fields.update(changes)
        return ModelParams(**fields)

    def equals(self, other: "ModelParams") -> bool:
        """Exact (bitwise) equality of all fields."""
        return (
            self.mu == other.mu
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.theta, other.theta)
        )


def _check_dims(params: ModelParams, cov: CovariateSet) -> None:
    n, p = params.theta.shape
    if cov.n != n or cov.p != p:
        raise ValidationError(f"covariates describe a {cov.n}x{cov.p} table but theta is {n}x{p}")
    if params.alpha.shape[0] != cov.k1 or params.beta.shape[0] != cov.k2:
        raise ValidationError(
            f"coefficient lengths ({params.alpha.shape[0]}, {params.beta.shape[0]}) "
            f"do not match covariate counts ({cov.k1}, {cov.k2})"
        )


def main_effects(params: ModelParams, cov: CovariateSet) -> np.ndarray:
    """``mu + R alpha + C beta`` broadcast to the full table."""
    _check_dims(params, cov)
    row = cov.R @ params.alpha
    col = cov.C @ params.beta
    return params.mu + row[:, None] + col[None, :]


def build_natural_params(params: ModelParams, cov: CovariateSet, clamp: Optional[float] = None) -> np.ndarray:
    """Natural-parameter matrix ``x = mu + R alpha + C beta + theta``.

    If ``clamp`` is given the entries are clipped to ``[-clamp, clamp]``.
    """
    x = main_effects(params, cov) + params.theta
    if clamp is not None:
        x = np.clip(x, -clamp, clamp)
    return x


def _checked_exp(table: CountTable, x: np.ndarray, exp_cap: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != table.shape:
        raise ValidationError(f"natural parameters {x.shape} do not match table {table.shape}")
    xo = np.where(table.mask, x, 0.0)
    if not np.all(np.isfinite(xo)):
        raise NumericRangeError("natural parameters are not finite")
    top = xo.max()
    if top > exp_cap:
        raise NumericRangeError(f"natural parameter {top:.4g} exceeds the exponential cap {exp_cap}")
    return xo


def data_fit(table: CountTable, x: np.ndarray, exp_cap: float = DEFAULT_EXP_CAP) -> float:
    """Poisson data-fit ``sum over observed cells of -Y x + exp(x)``."""
    xo = _checked_exp(table, x, exp_cap)
    terms = np.exp(xo) - table.values * xo
    return float(terms[table.mask].sum())


def data_fit_gradient(table: CountTable, x: np.ndarray, exp_cap: float = DEFAULT_EXP_CAP) -> np.ndarray:
    """Gradient of :func:`data_fit` with respect to ``x``; zero on masked cells."""
    xo = _checked_exp(table, x, exp_cap)
    return np.where(table.mask, np.exp(xo) - table.values, 0.0)


def penalized_objective(
    table: CountTable,
    params: ModelParams,
    cov: CovariateSet,
    lam: float,
    exp_cap: float = DEFAULT_EXP_CAP,
) -> float:
    """Data fit plus ``lam`` times the nuclear norm of ``theta``."""
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    value = data_fit(table, build_natural_params(params, cov), exp_cap)
    if lam > 0:
        value += lam * nuclear_norm(params.theta)
    return value
