"""Dense SVD helpers, matrix norms and the interaction-space projector."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import ValidationError


class SvdFactors(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _finite(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    return m


def svd_thin(m) -> SvdFactors:
    """Thin SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its entry of largest
    magnitude (first one on ties) is nonnegative; the matching right vector
    is flipped with it.
    """
    m = _finite(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if u.size:
        lead = np.argmax(np.abs(u), axis=0)
        signs = np.where(u[lead, np.arange(u.shape[1])] < 0, -1.0, 1.0)
        u = u * signs
        vt = vt * signs[:, None]
    return SvdFactors(u, s, vt.T)


def singular_values(m) -> np.ndarray:
    return np.linalg.svd(_finite(m), compute_uv=False)


def nuclear_norm(m) -> float:
    """Sum of singular values."""
    s = singular_values(m)
    return float(s.sum()) if s.size else 0.0


def operator_norm(m) -> float:
    """Largest singular value."""
    s = singular_values(m)
    return float(s[0]) if s.size else 0.0


def singular_value_soft_threshold(m, lam: float, return_norm: bool = False):
    """Proximal operator of ``lam * ||.||_*``: shrink every singular value by ``lam``.

    With ``return_norm=True`` also returns the nuclear norm of the result.
    """
    if lam < 0:
        raise ValidationError("threshold must be nonnegative")
    f = svd_thin(m)
    s = np.maximum(f.s - lam, 0.0)
    keep = s > 0
    out = (f.u[:, keep] * s[keep]) @ f.v[:, keep].T
    if return_norm:
        return out, float(s.sum())
    return out


def interaction_projector(m) -> np.ndarray:
    """Double centering: remove row means and column means, add back the grand mean."""
    m = _finite(m)
    return m - m.mean(axis=1, keepdims=True) - m.mean(axis=0, keepdims=True) + m.mean()


def effective_rank(m, tol: float = 1e-6) -> int:
    """Number of singular values strictly above ``tol``."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    return int(np.sum(singular_values(m) > tol))
