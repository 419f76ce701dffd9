"""Staggered difference-in-differences with network spillovers.

Estimates dynamic switching effects (DSE), control-state spillover effects
(CSE), and dynamic total effects (DTE) for staggered adoption designs where
units are exposed to other units' adoption through a prespecified network
exposure mapping, with spatial-HAC inference from stacked estimating
equations and a Monte Carlo verification subsystem.
"""

from .panel import (
    NEVER,
    PanelDataset,
    PanelError,
    ValidationReport,
    baseline_period,
    load_panel,
    long_difference,
    save_panel,
    validate,
)
from .exposure import (
    ExposureConfig,
    ExposureError,
    ExposurePath,
    NetworkSpec,
    build_exposure,
    coarsen,
    dose,
    line_network,
    raw_exposure,
    read_network_csv,
    two_date_state,
)
from .estimators import (
    ComponentEstimate,
    EstimationError,
    EstimationResults,
    EventTimeEstimate,
    FirstStageFit,
    RetainedSupport,
    aggregate_event_time,
    cs_att_benchmark,
    cse_never_treated_change,
    did_benchmark,
    dse_by_saturated_wls,
    dse_support,
    estimate_components,
    estimate_cse,
    estimate_cse_never_treated,
    estimate_dse,
    estimate_dte,
    estimate_local_pde,
    fit_cse_saturated,
    fit_cse_structured,
)
from .inference import (
    CovarianceEstimate,
    InferenceError,
    InfluenceRows,
    ShacConfig,
    StackedSystem,
    build_stacked_system,
    influence_rows,
    jacobian,
    jacobian_fd,
    pointwise_ci,
    shac_covariance,
    shac_cross_covariance,
    simultaneous_band,
    benchmark_influence_rows,
)
from .simulate import (
    DgpConfig,
    McReport,
    PotentialOutcomes,
    TruthTable,
    finite_population_truth,
    format_mc_tables,
    generate_dgp,
    run_monte_carlo,
    verify_did_decomposition,
    verify_unit_taxonomy,
)

__version__ = "0.1.0"
