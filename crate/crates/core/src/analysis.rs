//! End-to-end weighting analysis: fit the propensity model, weight, estimate
//! contrasts and attach a variance.
//!
//! Trimming runs as a two-stage procedure. Units whose inverse-score sum
//! exceeds the threshold are dropped, the propensity model is refit on the
//! rest, and inverse probability weights from the refit are used. Variances
//! treat the trimmed sample as fixed.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::data::{ContrastSpec, ObservationalSample, PropensityMatrix};
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_contrasts, weighted_group_means, ContrastEstimate, GroupMeanEstimate,
};
use crate::gps::{fit_multinomial, FitOptions, GpsModel};
use crate::parallel::Execution;
use crate::tilt::{compute_tilt, inverse_sum, optimal_alpha, TiltScheme, TrimThreshold, WeightSet};
use crate::variance::{
    bootstrap_contrasts, require_smooth, sandwich_contrasts, BootstrapOptions, BootstrapResult,
    SandwichOptions, DEFAULT_BOOTSTRAP_REPS,
};

/// How intervals are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarianceSpec {
    Sandwich,
    Bootstrap { reps: usize },
    None,
}

impl fmt::Display for VarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceSpec::Sandwich => write!(f, "sandwich"),
            VarianceSpec::Bootstrap { reps } => write!(f, "bootstrap:{reps}"),
            VarianceSpec::None => write!(f, "none"),
        }
    }
}

impl FromStr for VarianceSpec {
    type Err = Error;

    /// `sandwich | bootstrap[:<reps>] | none`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => match s {
                "sandwich" => Ok(VarianceSpec::Sandwich),
                "bootstrap" => Ok(VarianceSpec::Bootstrap {
                    reps: DEFAULT_BOOTSTRAP_REPS,
                }),
                "none" => Ok(VarianceSpec::None),
                _ => Err(Error::InvalidInput(format!(
                    "unknown variance method `{s}` (expected sandwich, bootstrap:<reps> or none)"
                ))),
            },
            Some(("bootstrap", reps)) => reps
                .parse()
                .map(|reps| VarianceSpec::Bootstrap { reps })
                .map_err(|_| {
                    Error::InvalidInput(format!("invalid bootstrap replicate count `{reps}`"))
                }),
            _ => Err(Error::InvalidInput(format!(
                "unknown variance method `{s}`"
            ))),
        }
    }
}

/// A sample with its fitted propensity model and balancing weights.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    /// The analysis sample: the input, or its trimmed subset.
    pub sample: ObservationalSample,
    /// Row indices of `sample` in the input.
    pub units: Vec<usize>,
    /// Model used for the weights (the refit under trimming).
    pub model: GpsModel,
    pub scores: PropensityMatrix,
    pub weights: WeightSet,
    pub scheme: TiltScheme,
    pub trim: Option<TrimThreshold>,
    /// First-stage model when trimming refit the scores.
    pub initial_model: Option<GpsModel>,
}

impl WeightedSample {
    /// Fraction of input units dropped by trimming.
    pub fn trimmed_fraction(&self) -> f64 {
        self.trim.map_or(0.0, |t| 1.0 - t.kept_fraction)
    }

    pub fn converged(&self) -> bool {
        self.model.converged && self.initial_model.as_ref().is_none_or(|m| m.converged)
    }
}

/// Fits the propensity model and computes the scheme's weights.
pub fn weigh(
    sample: &ObservationalSample,
    scheme: &TiltScheme,
    fit: &FitOptions,
) -> Result<WeightedSample> {
    let model = fit_multinomial(sample, fit)?;
    weigh_fitted(sample, scheme, model, fit)
}

/// [`weigh`] with an already fitted propensity model. `fit` is used only for
/// the refit after trimming.
pub fn weigh_fitted(
    sample: &ObservationalSample,
    scheme: &TiltScheme,
    model: GpsModel,
    fit: &FitOptions,
) -> Result<WeightedSample> {
    let scores = model.predict(sample.covariates())?;
    if let TiltScheme::Trimming { alpha } = scheme {
        let threshold = match alpha {
            Some(a) => {
                let kept = scores
                    .scores()
                    .outer_iter()
                    .filter(|r| inverse_sum(&r.to_vec()) <= *a)
                    .count();
                TrimThreshold {
                    alpha: *a,
                    kept_fraction: kept as f64 / sample.n() as f64,
                    satisfied: true,
                }
            }
            None => optimal_alpha(&scores)?,
        };
        let units: Vec<usize> = scores
            .scores()
            .outer_iter()
            .enumerate()
            .filter(|(_, r)| inverse_sum(&r.to_vec()) <= threshold.alpha)
            .map(|(i, _)| i)
            .collect();
        let trimmed = sample.subset(&units)?;
        let refit = fit_multinomial(&trimmed, fit)?;
        let refit_scores = refit.predict(trimmed.covariates())?;
        let weights = compute_tilt(&TiltScheme::Combined, &refit_scores, &trimmed)?;
        return Ok(WeightedSample {
            sample: trimmed,
            units,
            model: refit,
            scores: refit_scores,
            weights,
            scheme: scheme.clone(),
            trim: Some(threshold),
            initial_model: Some(model),
        });
    }
    let weights = compute_tilt(scheme, &scores, sample)?;
    Ok(WeightedSample {
        sample: sample.clone(),
        units: (0..sample.n()).collect(),
        model,
        scores,
        weights,
        scheme: scheme.clone(),
        trim: None,
        initial_model: None,
    })
}

/// Point estimates of the contrasts under the full pipeline. A propensity fit
/// that does not converge is an error here.
pub fn point_estimates(
    sample: &ObservationalSample,
    scheme: &TiltScheme,
    fit: &FitOptions,
    contrasts: &[ContrastSpec],
) -> Result<Vec<f64>> {
    let ws = weigh(sample, scheme, fit)?;
    if !ws.converged() {
        return Err(Error::NotConverged {
            iterations: ws.model.iterations,
            gradient_norm: ws.model.final_gradient_norm.unwrap_or(f64::NAN),
        });
    }
    let means = weighted_group_means(&ws.sample, &ws.weights)?;
    Ok(estimate_contrasts(&means, contrasts)?
        .into_iter()
        .map(|c| c.tau_hat)
        .collect())
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub fit: FitOptions,
    pub variance: VarianceSpec,
    /// Required for the bootstrap.
    pub seed: Option<u64>,
    pub exec: Execution,
    /// Defaults to all pairwise contrasts.
    pub contrasts: Option<Vec<ContrastSpec>>,
    pub sandwich: SandwichOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            variance: VarianceSpec::Sandwich,
            seed: None,
            exec: Execution::default(),
            contrasts: None,
            sandwich: SandwichOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub weighted: WeightedSample,
    pub means: Vec<GroupMeanEstimate>,
    pub estimates: Vec<ContrastEstimate>,
    pub bootstrap: Option<BootstrapResult>,
}

/// Checks that a scheme can be paired with a variance method.
pub fn check_compatibility(scheme: &TiltScheme, variance: VarianceSpec) -> Result<()> {
    match (scheme, variance) {
        // Trimming is treated as fixed and the sandwich applies to the IPW refit.
        (TiltScheme::Trimming { .. }, _) => Ok(()),
        (s, VarianceSpec::Sandwich) => require_smooth(s, "sandwich variance"),
        _ => Ok(()),
    }
}

pub fn analyze(
    sample: &ObservationalSample,
    scheme: &TiltScheme,
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    check_compatibility(scheme, opts.variance)?;
    sample.outcome()?;
    let contrasts = opts
        .contrasts
        .clone()
        .unwrap_or_else(|| ContrastSpec::all_pairwise(sample.n_groups()));
    let weighted = weigh(sample, scheme, &opts.fit)?;
    let means = weighted_group_means(&weighted.sample, &weighted.weights)?;
    let mut bootstrap = None;
    let estimates = match opts.variance {
        VarianceSpec::None => estimate_contrasts(&means, &contrasts)?,
        VarianceSpec::Sandwich => sandwich_contrasts(
            &weighted.sample,
            &weighted.weights,
            &weighted.model,
            &contrasts,
            &opts.sandwich,
        )?,
        VarianceSpec::Bootstrap { reps } => {
            let seed = opts
                .seed
                .ok_or_else(|| Error::InvalidInput("the bootstrap needs a seed".into()))?;
            let boot = bootstrap_contrasts(
                sample,
                scheme,
                &BootstrapOptions {
                    reps,
                    seed,
                    fit: opts.fit,
                    exec: opts.exec,
                    contrasts: Some(contrasts.clone()),
                },
            )?;
            let n_used: Vec<usize> = means.iter().map(|m| m.n_used).collect();
            let out = boot
                .estimates
                .iter()
                .cloned()
                .map(|mut e| {
                    e.n_used = n_used.clone();
                    e
                })
                .collect();
            bootstrap = Some(boot);
            out
        }
    };
    Ok(Analysis {
        weighted,
        means,
        estimates,
        bootstrap,
    })
}
