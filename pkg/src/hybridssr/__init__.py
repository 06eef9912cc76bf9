"""Hybrid-control trial toolkit.

Deterministic simulation and analysis of two-arm trials that borrow
historical controls through inverse probability weighting: blinded
sample size re-estimation (outcome-based and covariate-only), the IPW
test statistic with M-estimation variance, and Monte Carlo operating
characteristics.
"""

from .core import (
    Dataset,
    DesignParams,
    SubjectRecord,
    SummaryTable,
    Violation,
    summarize,
    validate,
)
from .errors import (
    DataValidationError,
    HistoricalPoolExhausted,
    HybridSSRError,
    NumericalError,
)
from .inference import (
    TestResult,
    estimating_equation_residual,
    ipw_test,
    sample_historical_controls,
    solve_estimating_equation,
    t_test_unadjusted,
)
from .normal import normal_cdf, two_sided_p, z_quantile
from .propensity import (
    PropensityModel,
    WeightSet,
    compute_weights,
    fit_propensity,
    predict_propensity,
)
from .simulation import (
    GAMMA_WEIGHTING,
    MetricsTable,
    ReplicationOutcome,
    Scenario,
    generate_scenario_data,
    make_scenario,
    run_replication,
    run_study_sim,
)
from .ssr import SSRResult, initial_sample_size, ssr_strategy1, ssr_strategy2

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DesignParams",
    "SubjectRecord",
    "SummaryTable",
    "Violation",
    "summarize",
    "validate",
    "HybridSSRError",
    "DataValidationError",
    "NumericalError",
    "HistoricalPoolExhausted",
    "TestResult",
    "ipw_test",
    "estimating_equation_residual",
    "solve_estimating_equation",
    "sample_historical_controls",
    "t_test_unadjusted",
    "z_quantile",
    "normal_cdf",
    "two_sided_p",
    "PropensityModel",
    "WeightSet",
    "fit_propensity",
    "predict_propensity",
    "compute_weights",
    "GAMMA_WEIGHTING",
    "Scenario",
    "MetricsTable",
    "ReplicationOutcome",
    "make_scenario",
    "generate_scenario_data",
    "run_replication",
    "run_study_sim",
    "SSRResult",
    "initial_sample_size",
    "ssr_strategy1",
    "ssr_strategy2",
    "__version__",
]
