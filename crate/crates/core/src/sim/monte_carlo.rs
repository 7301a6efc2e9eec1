//! Replicated comparison of estimators on simulated data.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{weigh_fitted, VarianceSpec};
use crate::data::ContrastSpec;
use crate::error::{Error, Result};
use crate::estimate::{
    difference_in_means, estimate_contrasts, weighted_group_means, ContrastEstimate,
};
use crate::gps::{fit_multinomial, FitOptions};
use crate::parallel::{map_indices, Execution};
use crate::rng::child_seed;
use crate::tilt::TiltScheme;
use crate::variance::{bootstrap_contrasts, sandwich_contrasts, BootstrapOptions, SandwichOptions};

use super::dgp::{Dgp, DgpSpec, ResolvedCovariance};
use super::truth::{true_estimands, DEFAULT_POPULATION_DRAWS};

/// One roster entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub name: String,
    /// `None` is the raw difference in means, judged against the
    /// combined-population estimand.
    pub scheme: Option<TiltScheme>,
    pub interval: VarianceSpec,
}

impl EstimatorConfig {
    pub fn new(
        name: impl Into<String>,
        scheme: Option<TiltScheme>,
        interval: VarianceSpec,
    ) -> Self {
        Self {
            name: name.into(),
            scheme,
            interval,
        }
    }

    /// Scheme whose population estimand this estimator targets.
    pub fn target(&self) -> TiltScheme {
        self.scheme.clone().unwrap_or(TiltScheme::Combined)
    }
}

/// DIF, IPW, TIPW, GMW and GOW. GMW intervals use `gmw_interval`, since its
/// weights admit no sandwich.
pub fn default_roster(gmw_interval: VarianceSpec) -> Vec<EstimatorConfig> {
    vec![
        EstimatorConfig::new("DIF", None, VarianceSpec::Sandwich),
        EstimatorConfig::new("IPW", Some(TiltScheme::Combined), VarianceSpec::Sandwich),
        EstimatorConfig::new(
            "TIPW",
            Some(TiltScheme::Trimming { alpha: None }),
            VarianceSpec::Sandwich,
        ),
        EstimatorConfig::new("GMW", Some(TiltScheme::Matching), gmw_interval),
        EstimatorConfig::new("GOW", Some(TiltScheme::Overlap), VarianceSpec::Sandwich),
    ]
}

#[derive(Debug, Clone)]
pub struct McOptions {
    pub reps: usize,
    pub seed: u64,
    pub exec: Execution,
    pub fit: FitOptions,
    pub roster: Vec<EstimatorConfig>,
    /// Draws used for the true estimands.
    pub truth_draws: usize,
    pub contrasts: Option<Vec<ContrastSpec>>,
    pub sandwich: SandwichOptions,
}

impl McOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            exec: Execution::default(),
            fit: FitOptions::default(),
            roster: default_roster(VarianceSpec::Bootstrap {
                reps: crate::variance::DEFAULT_BOOTSTRAP_REPS,
            }),
            truth_draws: DEFAULT_POPULATION_DRAWS,
            contrasts: None,
            sandwich: SandwichOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub estimator: String,
    pub contrast: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub abs_bias: f64,
    pub rmse: f64,
    /// Standard deviation of the estimates across replicates.
    pub mc_sd: f64,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McResult {
    pub design: String,
    pub reps: usize,
    pub seed: u64,
    pub succeeded: usize,
    /// `(replicate, reason)` for excluded replicates.
    pub failures: Vec<(usize, String)>,
    pub estimators: Vec<String>,
    pub contrasts: Vec<String>,
    pub rows: Vec<McRow>,
    /// Mean fraction of units removed by trimming, per estimator that trims.
    pub trim_fraction: Vec<(String, f64)>,
    pub alpha: Vec<f64>,
    pub covariance: ResolvedCovariance,
    /// `[estimator][contrast][successful replicate]`.
    #[serde(skip)]
    pub estimates: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub standard_errors: Vec<Vec<Vec<Option<f64>>>>,
    pub runtime_seconds: f64,
}

impl McResult {
    pub fn row(&self, estimator: &str, contrast: &str) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.contrast == contrast)
    }

    pub fn rows_for(&self, estimator: &str) -> Vec<&McRow> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .collect()
    }

    /// `Σ_contrasts RMSE²` for one estimator.
    pub fn total_mse(&self, estimator: &str) -> f64 {
        self.rows_for(estimator)
            .iter()
            .map(|r| r.rmse * r.rmse)
            .sum()
    }

    pub fn trim_fraction_of(&self, estimator: &str) -> Option<f64> {
        self.trim_fraction
            .iter()
            .find(|(n, _)| n == estimator)
            .map(|(_, f)| *f)
    }
}

struct Replicate {
    /// `[estimator][contrast]`
    estimates: Vec<Vec<ContrastEstimate>>,
    trimmed: Vec<Option<f64>>,
}

fn run_replicate(
    dgp: &Dgp,
    opts: &McOptions,
    contrasts: &[ContrastSpec],
    r: usize,
) -> Result<Replicate> {
    let ds = dgp.generate_indexed(opts.seed, r as u64)?;
    let sample = &ds.sample;
    let model = fit_multinomial(sample, &opts.fit)?;
    if !model.converged {
        return Err(Error::NotConverged {
            iterations: model.iterations,
            gradient_norm: model.final_gradient_norm.unwrap_or(f64::NAN),
        });
    }
    let mut estimates = Vec::with_capacity(opts.roster.len());
    let mut trimmed = Vec::with_capacity(opts.roster.len());
    for est in &opts.roster {
        let Some(scheme) = &est.scheme else {
            let dif = difference_in_means(sample)?;
            let out = contrasts
                .iter()
                .map(|c| {
                    dif.iter()
                        .find(|d| d.spec.a == c.a)
                        .cloned()
                        .ok_or_else(|| {
                            Error::InvalidInput(
                                "the difference in means covers pairwise contrasts only".into(),
                            )
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let out = if est.interval == VarianceSpec::None {
                out.into_iter()
                    .map(|mut e| {
                        e.variance = None;
                        e.ci_low = None;
                        e.ci_high = None;
                        e
                    })
                    .collect()
            } else {
                out
            };
            estimates.push(out);
            trimmed.push(None);
            continue;
        };
        let ws = weigh_fitted(sample, scheme, model.clone(), &opts.fit)?;
        if !ws.converged() {
            return Err(Error::NotConverged {
                iterations: ws.model.iterations,
                gradient_norm: ws.model.final_gradient_norm.unwrap_or(f64::NAN),
            });
        }
        let out = match est.interval {
            VarianceSpec::None => {
                estimate_contrasts(&weighted_group_means(&ws.sample, &ws.weights)?, contrasts)?
            }
            VarianceSpec::Sandwich => sandwich_contrasts(
                &ws.sample,
                &ws.weights,
                &ws.model,
                contrasts,
                &opts.sandwich,
            )?,
            VarianceSpec::Bootstrap { reps } => {
                bootstrap_contrasts(
                    sample,
                    scheme,
                    &BootstrapOptions {
                        reps,
                        seed: child_seed(opts.seed, r as u64),
                        fit: opts.fit,
                        exec: Execution::Sequential,
                        contrasts: Some(contrasts.to_vec()),
                    },
                )?
                .estimates
            }
        };
        trimmed.push(ws.trim.map(|_| ws.trimmed_fraction()));
        estimates.push(out);
    }
    Ok(Replicate { estimates, trimmed })
}

/// Generates `reps` datasets, applies every roster estimator and summarises
/// bias, RMSE and interval coverage against each estimator's own target.
///
/// A replicate in which any estimator fails is excluded; more than 1% of
/// excluded replicates is an error.
pub fn run_monte_carlo(spec: &DgpSpec, opts: &McOptions) -> Result<McResult> {
    let dgp = spec.build()?;
    run_monte_carlo_on(&dgp, opts)
}

/// [`run_monte_carlo`] on an already built design.
pub fn run_monte_carlo_on(dgp: &Dgp, opts: &McOptions) -> Result<McResult> {
    let start = Instant::now();
    if opts.reps == 0 {
        return Err(Error::InvalidInput(
            "at least one replicate is required".into(),
        ));
    }
    if opts.roster.is_empty() {
        return Err(Error::InvalidInput("the estimator roster is empty".into()));
    }
    let contrasts = opts
        .contrasts
        .clone()
        .unwrap_or_else(|| ContrastSpec::all_pairwise(dgp.n_groups()));
    let targets: Vec<TiltScheme> = opts.roster.iter().map(EstimatorConfig::target).collect();
    let truths = true_estimands(
        dgp,
        &targets,
        &contrasts,
        opts.truth_draws,
        opts.seed,
        opts.exec,
    )?;

    let outcomes = map_indices(opts.reps, opts.exec, |r| {
        run_replicate(dgp, opts, &contrasts, r)
    });

    let mut failures = Vec::new();
    let k = opts.roster.len();
    let c = contrasts.len();
    let mut estimates = vec![vec![Vec::with_capacity(opts.reps); c]; k];
    let mut ses = vec![vec![Vec::with_capacity(opts.reps); c]; k];
    let mut covered = vec![vec![(0usize, 0usize); c]; k];
    let mut trim_sum = vec![(0.0, 0usize); k];
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Err(err) => {
                log::warn!("replicate {r} excluded: {err}");
                failures.push((r, err.to_string()));
            }
            Ok(rep) => {
                for e in 0..k {
                    for (ci, est) in rep.estimates[e].iter().enumerate() {
                        estimates[e][ci].push(est.tau_hat);
                        ses[e][ci].push(est.se());
                        if let Some(hit) = est.covers(truths[e][ci]) {
                            covered[e][ci].0 += usize::from(hit);
                            covered[e][ci].1 += 1;
                        }
                    }
                    if let Some(f) = rep.trimmed[e] {
                        trim_sum[e].0 += f;
                        trim_sum[e].1 += 1;
                    }
                }
            }
        }
    }
    let succeeded = opts.reps - failures.len();
    if failures.len() * 100 > opts.reps || succeeded == 0 {
        return Err(Error::FailureRate {
            failed: failures.len(),
            reps: opts.reps,
            first: failures
                .first()
                .map(|f| format!("replicate {}: {}", f.0, f.1))
                .unwrap_or_default(),
        });
    }

    let mut rows = Vec::with_capacity(k * c);
    for e in 0..k {
        for ci in 0..c {
            let xs = &estimates[e][ci];
            let m = xs.len() as f64;
            let truth = truths[e][ci];
            let mean = xs.iter().sum::<f64>() / m;
            let mse = xs.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / m;
            let sd = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            let se: Vec<f64> = ses[e][ci].iter().flatten().copied().collect();
            let (hits, total) = covered[e][ci];
            rows.push(McRow {
                estimator: opts.roster[e].name.clone(),
                contrast: contrasts[ci].label.clone(),
                truth,
                mean_estimate: mean,
                abs_bias: (mean - truth).abs(),
                rmse: mse.sqrt(),
                mc_sd: sd,
                mean_se: (!se.is_empty()).then(|| se.iter().sum::<f64>() / se.len() as f64),
                coverage: (total > 0).then(|| hits as f64 / total as f64),
            });
        }
    }
    let trim_fraction = (0..k)
        .filter(|&e| trim_sum[e].1 > 0)
        .map(|e| {
            (
                opts.roster[e].name.clone(),
                trim_sum[e].0 / trim_sum[e].1 as f64,
            )
        })
        .collect();
    Ok(McResult {
        design: dgp.spec.name.clone(),
        reps: opts.reps,
        seed: opts.seed,
        succeeded,
        failures,
        estimators: opts.roster.iter().map(|e| e.name.clone()).collect(),
        contrasts: contrasts.iter().map(|c| c.label.clone()).collect(),
        rows,
        trim_fraction,
        alpha: dgp.alpha.clone(),
        covariance: dgp.covariance.clone(),
        estimates,
        standard_errors: ses,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Writes `metric, method, <contrast>…` with Bias, RMSE and Coverage blocks.
pub fn write_table_csv(path: impl AsRef<Path>, result: &McResult) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string(), "method".into()];
    header.extend(result.contrasts.iter().cloned());
    out.write_record(&header)?;
    type Metric = fn(&McRow) -> Option<f64>;
    let metrics: [(&str, Metric); 3] = [
        ("Bias", |r| Some(r.abs_bias)),
        ("RMSE", |r| Some(r.rmse)),
        ("Coverage", |r| r.coverage),
    ];
    for (metric, get) in metrics {
        for est in &result.estimators {
            let mut row = vec![metric.to_string(), est.clone()];
            for c in &result.contrasts {
                let v = result.row(est, c).and_then(get);
                row.push(v.map(|v| v.to_string()).unwrap_or_default());
            }
            out.write_record(&row)?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes every summary row, one per estimator and contrast.
pub fn write_summary_csv(path: impl AsRef<Path>, result: &McResult) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    for r in &result.rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes `estimator, contrast, replicate, estimate, se` for every
/// successful replicate (replicates are numbered from 1).
pub fn write_replicate_estimates(path: impl AsRef<Path>, result: &McResult) -> Result<()> {
    let path = path.as_ref();
    let failed: std::collections::HashSet<usize> =
        result.failures.iter().map(|(r, _)| *r).collect();
    let ids: Vec<usize> = (0..result.reps).filter(|r| !failed.contains(r)).collect();
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["estimator", "contrast", "replicate", "estimate", "se"])?;
    for (e, est) in result.estimators.iter().enumerate() {
        for (c, contrast) in result.contrasts.iter().enumerate() {
            for (k, value) in result.estimates[e][c].iter().enumerate() {
                let se = result.standard_errors[e][c][k]
                    .map(|s| s.to_string())
                    .unwrap_or_default();
                out.write_record([
                    est.clone(),
                    contrast.clone(),
                    (ids[k] + 1).to_string(),
                    value.to_string(),
                    se,
                ])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}
