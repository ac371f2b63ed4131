//! Scenarios, error metrics, the Monte Carlo harness and its summaries.

pub mod io;
pub mod metrics;
pub mod montecarlo;
pub mod scenarios;
pub mod summary;

pub use metrics::{cosine_error, position_error};
pub use montecarlo::{
    noise_seed, run_monte_carlo, run_study, sigma_grid, MonteCarloConfig, Profile, ResultRow, Study,
    CSV_SCHEMA_VERSION,
};
pub use scenarios::{build_scenario, Scenario, FIVE_PLAYER_HIGHWAY, SCENARIO_IDS, TWO_PLAYER_CROSSING};
pub use summary::{median_iqr, quantile_sorted, summarize, Metric, SummaryRow, DEFAULT_WINDOW};
