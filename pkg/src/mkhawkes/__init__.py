"""Multi-kernel exponential Hawkes toolkit for tick-level mid-price events.

Simulation, closed-form moments, likelihood-based calibration with a
conditional-concavity profile search, residual diagnostics, responsiveness
and cause-attribution analytics, plus a batch CLI (``mkhawkes --help``).
"""

from .analysis import (
    AttributionReport,
    ResponsivenessReport,
    arrival_probability,
    attribute_causes,
    expected_arrival_time,
    responsiveness_report,
)
from .diagnostics import (
    ResidualSet,
    ScanResult,
    count_local_maxima,
    ks_exponential,
    qq_exponential,
    qq_max_deviation,
    residuals,
    scan_conditional_max,
    success_rate_experiment,
)
from .estimate import (
    FitResult,
    ModelSelection,
    StdErrors,
    aic_of,
    fit_direct,
    fit_profile,
    observed_information,
    select_model,
    standard_errors,
)
from .ingest import (
    IngestReport,
    QuoteRecord,
    dedupe_and_order,
    ingest_quotes_file,
    mid_price_events,
    read_events_csv,
    read_quotes_csv,
    write_events_csv,
)
from .likelihood import (
    SufficientStats,
    compensator_totals,
    conditional_gradient,
    conditional_hessian,
    log_likelihood,
    sufficient_stats,
)
from .model import (
    ConstraintProfile,
    EventStream,
    MarkovState,
    ModelParams,
    ParamMap,
    advance_state,
    apply_event,
    branching_matrix,
    intensity_at,
    spectral_radius,
)
from .moments import (
    DegenerateModelError,
    MomentReport,
    NonStationaryError,
    lambda_N_coefficients,
    moment_report,
    second_moment_LL,
    second_moment_N,
    stationary_intensity,
    stationary_mean_components,
    variance_mid_price,
)
from .simulate import (
    EnsembleSummary,
    RunawaySimulationError,
    SimConfig,
    simulate_ensemble,
    simulate_path,
)

__version__ = "0.1.0"
