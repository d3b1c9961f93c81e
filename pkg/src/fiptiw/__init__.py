"""Weighted estimation for irregular longitudinal data.

The package fits marginal outcome models when observation times are
informative and treatment is confounded: inverse-intensity weights from a
recurrent-event proportional hazards model, inverse probability of treatment
weights from a propensity model, inverse probability of censoring weights,
their products, percentile trimming, and weighted independence-working GEEs.
A simulation engine and a small CLI sit on top.
"""

from .errors import (
    BoundViolationError,
    ConfigError,
    ConvergenceError,
    DataError,
    FiptiwError,
    PositivityError,
    RankError,
    SeparationError,
)
from .panel import (
    AffineSeries,
    ConstantSeries,
    Panel,
    RiskTable,
    ScaledLogSeries,
    StepSeries,
    Subject,
    build_panel,
    covariate_at,
    covariate_values,
    one_per_cluster,
    read_panel_csv,
    risk_table,
    stacked,
    truncate_follow_up,
    with_history_series,
    write_panel_csv,
)
from .survival import (
    FittedCensoringHazard,
    FittedIntensity,
    PhSpec,
    fit_censoring,
    fit_ph,
    log_partial_likelihood,
    ph_information,
    ph_score,
)
from .gee import (
    GeeFit,
    OutcomeSpec,
    SplineSpec,
    estimating_function_value,
    fit_summary,
    sandwich_covariance,
    solve_gee,
    spline_basis,
    tertile_knots,
)
from .weights import (
    FittedPropensity,
    TrimRecord,
    WeightSet,
    combine,
    fit_propensity,
    iiw_weights,
    ipcw_weights,
    iptw_weights,
    trim,
)
from .simgen import (
    DgpSpec,
    HazardCensoring,
    LogisticTreatment,
    NoCensoring,
    RandomizedTreatment,
    RngStream,
    UniformCensoring,
    gen_panel,
)
from .experiments import (
    TRIM_GRID,
    TRUTH,
    Estimate,
    ExtremitySummaryRow,
    Failure,
    MetricsRow,
    MetricsTable,
    ReplicationResult,
    ScenarioSpec,
    WeightExtremity,
    aggregate,
    emit_plot_data,
    extremity_summary,
    replicate_scenario,
    run_scenarios,
    run_sim1,
    run_sim2,
    run_sim3,
    sim1_grid,
    sim2_grid,
    sim3_grid,
    validate_scenario,
    write_extremity_csv,
    write_metrics_csv,
    write_replications_csv,
)
from .analysis import (
    AnalysisResult,
    AnalyzeConfig,
    MethodRow,
    analyze,
    computed_weights,
    write_analysis_csv,
    write_weights_csv,
)

__version__ = "0.1.0"
