//! Balancing weights for comparing several treatment groups.
//!
//! The crate fits a multinomial logistic generalized propensity score,
//! turns it into balancing weights for a chosen target population (inverse
//! probability, trimming, matching, overlap and others), estimates weighted
//! group means and their contrasts, and attaches sandwich or bootstrap
//! intervals. Balance diagnostics and a simulation harness sit alongside.
//!
//! ```no_run
//! use balancekit::{analyze, load_sample, AnalysisOptions, SampleSchema, TiltScheme};
//!
//! let schema = SampleSchema::new("treatment").with_outcome("y");
//! let sample = load_sample("data.csv", &schema)?;
//! let result = analyze(&sample, &TiltScheme::Overlap, &AnalysisOptions::default())?;
//! for est in &result.estimates {
//!     println!("{} {:.3} ± {:.3}", est.spec.label, est.tau_hat, 1.96 * est.se().unwrap());
//! }
//! # Ok::<(), balancekit::Error>(())
//! ```

#![allow(clippy::needless_range_loop)]

/// Library version, echoed in output manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analysis;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod gps;
pub mod linalg;
pub mod parallel;
pub mod rng;
pub mod sim;
pub mod tilt;
pub mod variance;

pub use analysis::{analyze, weigh, Analysis, AnalysisOptions, VarianceSpec, WeightedSample};
pub use data::{
    load_sample, validate_propensities, write_matrix, write_sample, ContrastSpec,
    ObservationalSample, PropensityMatrix, SampleSchema, ScoreSource,
};
pub use diagnostics::{
    balance_report, effective_sample_size, rank_and_replace, BalanceReport, EffectiveSampleSize,
};
pub use error::{Error, ErrorCategory, Result};
pub use estimate::{
    all_pairwise, difference_in_means, estimate_contrast, weighted_group_means, ContrastEstimate,
    GroupMeanEstimate, VarianceMethod,
};
pub use gps::{
    fit_multinomial, information_matrix, predict_gps, score_vectors, FitOptions, GpsModel,
};
pub use parallel::Execution;
pub use tilt::{
    compute_tilt, eligibility_indicators, optimal_alpha, IndicatorFn, TiltScheme, TrimThreshold,
    WeightSet,
};
pub use variance::{bootstrap_pairwise, sandwich_pairwise, weight_gradient, SandwichOptions};
