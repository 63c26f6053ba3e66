"""Post-fit products: imputed counts, multiplicative decomposition, biplots
and correlations between covariates and interaction directions."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import ValidationError
from .linalg import svd_thin
from .model import CountTable, CovariateSet, build_natural_params
from .solver import FitResult


class BiplotCoords(NamedTuple):
    row_points: np.ndarray
    col_points: np.ndarray
    singular_values: np.ndarray
    d: int


class Decomposition(NamedTuple):
    """``exp(x) = offset * row * col * interaction`` elementwise."""

    offset: np.ndarray
    row: np.ndarray
    col: np.ndarray
    interaction: np.ndarray

    def product(self) -> np.ndarray:
        return self.offset * self.row * self.col * self.interaction


def _check_fit(fit: FitResult, cov: CovariateSet):
    if fit.params.theta.shape != (cov.n, cov.p):
        raise ValidationError("fit and covariates describe tables of different sizes")


def impute(table: CountTable, fit: FitResult, cov: CovariateSet) -> np.ndarray:
    """Fitted means ``exp(x)`` for every cell, observed or not."""
    _check_fit(fit, cov)
    if table.shape != fit.params.theta.shape:
        raise ValidationError("fit and table dimensions differ")
    return np.exp(build_natural_params(fit.params, cov))


def completed_table(table: CountTable, fit: FitResult, cov: CovariateSet) -> np.ndarray:
    """Observed counts where available, fitted means elsewhere."""
    return np.where(table.mask, table.values.astype(float), impute(table, fit, cov))


def multiplicative_decomposition(fit: FitResult, cov: CovariateSet) -> Decomposition:
    p = fit.params
    _check_fit(fit, cov)
    shape = p.theta.shape
    row = np.exp(cov.R @ p.alpha)[:, None] * np.ones(shape)
    col = np.exp(cov.C @ p.beta)[None, :] * np.ones(shape)
    return Decomposition(np.full(shape, np.exp(p.mu)), row, col, np.exp(p.theta))


def biplot_coordinates(fit: FitResult, d: int = 2) -> BiplotCoords:
    """Rows ``U_d sqrt(s_d)`` and columns ``V_d sqrt(s_d)`` from the SVD of theta.

    ``row_points @ col_points.T`` is the best rank-``d`` approximation of theta.
    """
    theta = fit.params.theta
    if d < 1 or d > min(theta.shape):
        raise ValidationError(f"d must lie in [1, {min(theta.shape)}]")
    f = svd_thin(theta)
    root = np.sqrt(f.s[:d])
    return BiplotCoords(f.u[:, :d] * root, f.v[:, :d] * root, f.s[:d].copy(), d)


def _pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Correlation of every column of ``a`` with every column of ``b``."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.clip((a.T @ b) / np.outer(na, nb), -1.0, 1.0)


def interaction_covariate_correlations(fit: FitResult, cov: CovariateSet, d: int = 2, tol: float = 1e-6):
    """Pearson correlations of covariates with the leading singular directions of theta.

    Returns ``(row_corr, col_corr)`` of shapes ``(K1, d)`` and ``(K2, d)``:
    row covariates against left singular vectors, column covariates against
    right ones. Axes whose singular value is at most ``tol`` are undefined
    and filled with NaN.
    """
    _check_fit(fit, cov)
    if cov.k1 + cov.k2 == 0:
        raise ValidationError("no covariates to correlate")
    theta = fit.params.theta
    if d < 1 or d > min(theta.shape):
        raise ValidationError(f"d must lie in [1, {min(theta.shape)}]")
    f = svd_thin(theta)
    dead = f.s[:d] <= tol
    row_corr = _pearson(cov.R, f.u[:, :d]) if cov.k1 else np.zeros((0, d))
    col_corr = _pearson(cov.C, f.v[:, :d]) if cov.k2 else np.zeros((0, d))
    row_corr[:, dead] = np.nan
    col_corr[:, dead] = np.nan
    return row_corr, col_corr
