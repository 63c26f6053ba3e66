"""
Fitting a count table with covariates and filling in missing cells
===================================================================

A site-by-year abundance table is simulated, a fifth of its cells are
hidden, and the low-rank model is fitted with the regularization chosen
by the quantile universal threshold.
"""

# %%
import numpy as np

import lori

spec = lori.SimSpec(n=60, p=15, tau_ratio=0.5, miss_prob=0.2, seed=1)
table, cov, truth = lori.simulate_dataset(spec)
print(f"{table.shape[0]} sites x {table.shape[1]} years, {table.n_observed} observed cells")

# %%
# The threshold comes from a parametric bootstrap of the main-effects model.
report = lori.qut_select(table, cov, B=100, seed=0)
print(f"lambda0 = {report.lambda0:.2f}, QUT = {report.chosen_lambda:.2f}")

res = lori.fit(table, cov, report.chosen_lambda)
print(f"converged after {res.n_iters} iterations, interaction rank {res.effective_rank}")

# %%
# Coefficients on the scale of the raw covariates.
mu, alpha, beta = cov.to_original_scale(res.params.mu, res.params.alpha, res.params.beta)
print("alpha:", np.round(alpha, 3), " true:", spec.alpha_star)
print("beta: ", np.round(beta, 3), " true:", spec.beta_star)

# %%
# Hidden cells: compare fitted means with the true Poisson means.
fitted = lori.impute(table, res, cov)
true_means = np.exp(lori.build_natural_params(truth, cov))
hidden = ~table.mask
print(f"mean abs error on hidden cells: {np.abs(fitted - true_means)[hidden].mean():.2f}")

# %%
# Counts factor into offset * row * column * interaction terms.
dec = lori.multiplicative_decomposition(res, cov)
print("largest interaction factor:", dec.interaction.max().round(2))

bp = lori.biplot_coordinates(res, d=2)
print("first two singular values:", bp.singular_values.round(3))
rc, cc = lori.interaction_covariate_correlations(res, cov, d=2)
print("row covariate / axis correlations:\n", rc.round(2))
