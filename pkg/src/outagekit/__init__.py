"""Privacy-preserving quickest line-outage detection toolkit."""

__version__ = "0.1.0"

from .gauss import (
    BusPair,
    GaussianModel,
    conditional_correlation,
    conditional_covariance,
    encrypt_model,
    fit_gaussian,
    kl_divergence,
    log_density,
    log_likelihood_ratio,
    new_gaussian,
    sample,
)
from .privacy import (
    PrivacyMechanism,
    TradeoffCurve,
    dp_delta,
    gdp_parameter,
    kl_degradation,
    kl_degradation_upper_bound,
    randomize,
    sensitivity_from_range,
    tradeoff_curve,
)
from .detection import (
    BENCHMARK,
    MITIGATED,
    PRIVACY_ONLY,
    DetectorKind,
    DetectorState,
    StopReport,
    add_lower_bound,
    direct_statistic,
    first_crossing,
    log_stat_trajectory,
    mitigated_log_ratio,
    run_sequence,
    sample_log_ratios,
    threshold,
    variance_scaled,
)
from .localization import (
    LocalizationConfig,
    LocalizationReport,
    correlation_matrix,
    estimate_post_covariance,
    localize,
)
from .datagen import (
    GridModel,
    GridScenario,
    LoadStats,
    RESIDENTIAL_LOAD_STATS,
    SequenceData,
    SequenceSpec,
    apply_outage,
    build_scenario,
    bundled_topology,
    draw_changepoint,
    gen_sequence,
    linearized_power_flow,
    load_topology,
    synth_load_profile,
    synthetic_change_models,
)
from .harness import (
    ExperimentConfig,
    MonteCarloSummary,
    asymptotic_delay_curve,
    coverage_experiment,
    emit_results,
    parse_detector,
    run_monte_carlo,
    tradeoff_report,
)
