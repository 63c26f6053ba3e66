import numpy as np
import pytest

from lori import CountTable, CovariateSet, interaction_projector


def random_instance(rng, n=8, p=5, k1=1, k2=1, miss=0.0, theta_scale=0.5, base=1.0):
    """Small Poisson table with Gaussian covariates and a rank-2 interaction."""
    R = rng.standard_normal((n, k1))
    C = rng.standard_normal((p, k2))
    cov = CovariateSet.standardize(R if k1 else None, C if k2 else None, n=n, p=p)
    theta = theta_scale * interaction_projector(rng.standard_normal((n, 2)) @ rng.standard_normal((2, p)))
    x = base + 0.5 * (cov.R.sum(axis=1)[:, None] - cov.C.sum(axis=1)[None, :]) + theta
    y = rng.poisson(np.exp(x))
    mask = np.ones((n, p), dtype=bool)
    if miss > 0:
        for _ in range(1000):
            mask = rng.random((n, p)) >= miss
            if mask.any(axis=0).all() and mask.any(axis=1).all() and y[mask].sum() > 0:
                break
    return CountTable(y, mask), cov


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
