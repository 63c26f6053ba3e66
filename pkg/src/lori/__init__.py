"""Low-rank interaction model for count tables with covariates and missing values."""

from .analysis import (
    BiplotCoords,
    Decomposition,
    biplot_coordinates,
    completed_table,
    impute,
    interaction_covariate_correlations,
    multiplicative_decomposition,
)
from .exceptions import (
    ConvergenceError,
    DegenerateOffsetError,
    LoriError,
    NumericalError,
    NumericRangeError,
    RankDeficiencyError,
    ValidationError,
)
from .linalg import (
    SvdFactors,
    effective_rank,
    interaction_projector,
    nuclear_norm,
    operator_norm,
    singular_value_soft_threshold,
    svd_thin,
)
from .model import (
    CountTable,
    CovariateSet,
    ModelParams,
    build_natural_params,
    data_fit,
    data_fit_gradient,
    penalized_objective,
)
from .selection import (
    SelectionReport,
    cross_validate,
    independence_test,
    null_threshold_stat,
    qut_select,
)
from .simulation import (
    SimSpec,
    apply_mcar_mask,
    baseline_column_mean,
    run_estimation_benchmark,
    run_imputation_benchmark,
    simulate_dataset,
)
from .solver import (
    FitResult,
    SolverConfig,
    fit,
    fit_null_model,
    fit_path,
    update_coefficients,
    update_interaction_step,
    update_offset,
)

__version__ = "0.1.0"
