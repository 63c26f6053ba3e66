"""
Small-scale simulation benchmarks
==================================

Coefficient recovery against a main-effects Poisson regression, log-mean
recovery against a low-rank fit that ignores covariates, and imputation
against column means. Replicate counts are kept tiny so the script runs
in seconds; the command-line ``bench-*`` subcommands run the full
versions.
"""

# %%
import lori

specs = [lori.SimSpec(n=60, p=15, tau_ratio=t) for t in (1.0, 0.25, 0.0)]
est = lori.run_estimation_benchmark(specs, reps=3, n_boot=50)
for g in est.summary["groups"]:
    coef = f"{g['coef_rmse_mean']:.3f}" if "coef_rmse_mean" in g else "  -  "
    print(f"tau={g['tau']:<5} {g['method']:<5} coef rmse {coef}  rel rmse {g['rel_rmse_mean']:.3f}")

# %%
imp = lori.run_imputation_benchmark(lori.SimSpec(n=60, p=15, tau_ratio=0.5), miss_fracs=(0.2, 0.6), reps=3, n_boot=50)
for g in imp.summary["groups"]:
    print(
        f"{g['miss_frac']:.0%} missing: model {g['lori_error_median']:.1f}, "
        f"column means {g['colmean_error_median']:.1f}"
    )
