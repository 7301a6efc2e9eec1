//! Simulation design, population truths and the Monte Carlo harness.

pub mod dgp;
pub mod monte_carlo;
pub mod truth;

pub use dgp::{calibrate_intercepts, generate_dataset, Dgp, DgpSpec, SimDataset, PRESETS};
pub use monte_carlo::{
    default_roster, run_monte_carlo, EstimatorConfig, McOptions, McResult, McRow,
};
pub use truth::{q_functional, q_functionals, ternary_grid, true_estimand, true_estimands};
