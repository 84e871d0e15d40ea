//! Evaluation: frame metrics, benchmark suites, generalization and
//! hyper-parameter sweeps, and gradient attribution.

mod attribution;
mod metrics;
mod suite;
mod sweeps;

pub use attribution::{
    averaged_gradients, cauchy_riemann_check, direct_gradients, recent_steps_dominate,
    summarize_windows, write_attribution_csv, AttributionMap, AttributionSummary,
    CauchyRiemannReport,
};
pub use metrics::{mae_per_step, normalized_correlation};
pub use suite::{
    free_suite, full_suite, potential_suite, run_suite, CaseCategory, CaseResult, SuiteCase,
    SuitePredictor, SuiteReport, TestSuite,
};
pub use sweeps::{
    default_axis_values, generalization_sweep, hyperparameter_sweep, write_hyper_csv,
    write_sweep_csv, HyperAxis, HyperPointResult, HyperSweepContext, SweepAxis, SweepBase,
    SweepPointResult,
};
