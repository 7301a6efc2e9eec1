//! Sandwich variance for smooth tilting schemes and a resampling bootstrap
//! for everything else.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::Rng;

use crate::analysis::point_estimates;
use crate::data::{ContrastSpec, ObservationalSample};
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_contrasts, weighted_group_means, ContrastEstimate, GroupMeanEstimate, VarianceMethod,
};
use crate::gps::{information_matrix, score_vectors, FitOptions, GpsModel};
use crate::linalg::symmetric_inverse;
use crate::parallel::{map_indices, Execution};
use crate::rng::{stream, Purpose};
use crate::tilt::TiltScheme;
use crate::tilt::WeightSet;

/// Errors unless the scheme's weights are differentiable in θ.
pub fn require_smooth(scheme: &TiltScheme, what: &'static str) -> Result<()> {
    if scheme.is_smooth() {
        Ok(())
    } else {
        Err(Error::UnsupportedScheme {
            scheme: scheme.to_string(),
            what,
            reason: "its weights are not everywhere differentiable in the propensity model parameters; use the bootstrap instead",
        })
    }
}

/// Coefficients `G[j, l]` with `∂ log w_j / ∂θ_l = G[j, l] · (1, x)` for one unit,
/// where `θ_l` is the block of group `l + 1`.
fn log_weight_coefficients(scheme: &TiltScheme, e: &[f64]) -> Array2<f64> {
    let j = e.len();
    let delta = |a: usize, b: usize| f64::from(u8::from(a == b));
    // ∂ log h / ∂θ_l = c_l · (1, x)
    let dlogh: Vec<f64> = (1..j)
        .map(|l| match *scheme {
            TiltScheme::Combined | TiltScheme::CustomIndicator(_) => 0.0,
            TiltScheme::Treated(t) => delta(t, l) - e[l],
            TiltScheme::VarianceWeighted(t) => {
                (1.0 - 2.0 * e[t]) / (1.0 - e[t]) * (delta(t, l) - e[l])
            }
            // Σ_k (h/e_k) ∂ log e_k, using Σ_k h/e_k = 1.
            TiltScheme::Overlap => {
                let h = crate::tilt::overlap_tilt(e);
                h / e[l] - e[l]
            }
            _ => unreachable!("non-smooth scheme"),
        })
        .collect();
    Array2::from_shape_fn((j, j - 1), |(g, b)| {
        let l = b + 1;
        dlogh[b] - (delta(g, l) - e[l])
    })
}

/// Analytic `∂w_ij/∂θ` as an `n × J × dim(θ)` array, where `w` is the
/// scheme's weight evaluated at the model's scores.
pub fn weight_gradient(
    scheme: &TiltScheme,
    model: &GpsModel,
    x: ArrayView2<'_, f64>,
) -> Result<Array3<f64>> {
    require_smooth(scheme, "analytic weight gradients")?;
    if x.ncols() != model.n_covariates() {
        return Err(Error::Dimension {
            what: "covariate columns",
            expected: model.n_covariates(),
            found: x.ncols(),
        });
    }
    let (n, j, q) = (x.nrows(), model.n_groups, model.block_len());
    let mut out = Array3::zeros((n, j, model.n_params()));
    for (i, xi) in x.outer_iter().enumerate() {
        let e = model.score_row(xi);
        let h = match scheme {
            TiltScheme::CustomIndicator(p) => f64::from(u8::from(p.eval(xi))),
            s => s.row_tilt(&e).expect("smooth scheme is row-local"),
        };
        let g = log_weight_coefficients(scheme, &e);
        for k in 0..j {
            let w = h / e[k];
            for b in 0..j - 1 {
                let c = w * g[[k, b]];
                out[[i, k, b * q]] = c;
                for (a, v) in xi.iter().enumerate() {
                    out[[i, k, b * q + 1 + a]] = c * v;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SandwichOptions {
    /// Include the term accounting for estimation of the propensity model.
    /// Turning it off treats the fitted scores as known.
    pub score_correction: bool,
}

impl Default for SandwichOptions {
    fn default() -> Self {
        Self {
            score_correction: true,
        }
    }
}

/// Estimated influence values `ψ̂_ij` and the pieces they are built from.
#[derive(Debug, Clone)]
pub struct InfluenceDecomposition {
    /// `n × J`.
    pub psi: Array2<f64>,
    /// `J × dim(θ)`: `(1/n) Σ_i D_ij (Y_i − m̂_j) ∂w_ij/∂θ`.
    pub correction: Array2<f64>,
    pub h_sum: f64,
    pub means: Vec<GroupMeanEstimate>,
    /// True when the information matrix needed the pseudo-inverse.
    pub pseudo_inverse: bool,
}

/// `ψ̂_ij = D_ij (Y_i − m̂_j) w_ij + c_jᵀ I⁻¹ S_i`.
pub fn influence_decomposition(
    sample: &ObservationalSample,
    weights: &WeightSet,
    model: &GpsModel,
    opts: &SandwichOptions,
) -> Result<InfluenceDecomposition> {
    require_smooth(&weights.scheme, "sandwich variance")?;
    let y = sample.outcome()?;
    let means = weighted_group_means(sample, weights)?;
    let (n, j) = (sample.n(), sample.n_groups());
    let q = model.block_len();
    let d = model.n_params();

    let mut psi = Array2::zeros((n, j));
    let mut correction = Array2::zeros((j, d));
    for (i, (xi, &g)) in sample
        .covariates()
        .outer_iter()
        .zip(sample.groups())
        .enumerate()
    {
        let resid = y[i] - means[g].m_hat;
        let w = weights.own_weight(i, g);
        psi[[i, g]] = resid * w;
        if opts.score_correction && w != 0.0 {
            let e = model.score_row(xi);
            let coef = log_weight_coefficients(&weights.scheme, &e);
            for b in 0..j - 1 {
                let c = resid * w * coef[[g, b]];
                correction[[g, b * q]] += c;
                for (a, v) in xi.iter().enumerate() {
                    correction[[g, b * q + 1 + a]] += c * v;
                }
            }
        }
    }
    correction /= n as f64;

    let mut pseudo_inverse = false;
    if opts.score_correction {
        let info = information_matrix(model, sample)?;
        let inv = symmetric_inverse(info.view());
        if inv.pseudo {
            log::warn!(
                "information matrix condition number {:.3e}; using the pseudo-inverse",
                inv.condition
            );
            pseudo_inverse = true;
        }
        let scores = score_vectors(model, sample)?;
        // (J × d)(d × d)(d × n) → J × n
        let proj = correction.dot(&inv.inverse).dot(&scores.t());
        psi += &proj.t();
    }
    Ok(InfluenceDecomposition {
        psi,
        correction,
        h_sum: weights.h_sum(),
        means,
        pseudo_inverse,
    })
}

/// Sandwich variances `Σ_i (Σ_j a_j ψ̂_ij)² / (Σ_i h_i)²` with normal 95% intervals.
pub fn sandwich_contrasts(
    sample: &ObservationalSample,
    weights: &WeightSet,
    model: &GpsModel,
    contrasts: &[ContrastSpec],
    opts: &SandwichOptions,
) -> Result<Vec<ContrastEstimate>> {
    let inf = influence_decomposition(sample, weights, model, opts)?;
    if inf.h_sum <= 0.0 {
        return Err(Error::ZeroWeightMass {
            group: "all".into(),
            scheme: weights.scheme.to_string(),
        });
    }
    let denom = inf.h_sum * inf.h_sum;
    let point = estimate_contrasts(&inf.means, contrasts)?;
    Ok(point
        .into_iter()
        .map(|est| {
            let a = Array1::from_vec(est.spec.a.clone());
            let v = inf.psi.dot(&a).iter().map(|p| p * p).sum::<f64>() / denom;
            est.with_normal_interval(v)
        })
        .collect())
}

/// All pairwise contrasts with sandwich variances.
pub fn sandwich_pairwise(
    sample: &ObservationalSample,
    weights: &WeightSet,
    model: &GpsModel,
) -> Result<Vec<ContrastEstimate>> {
    sandwich_contrasts(
        sample,
        weights,
        model,
        &ContrastSpec::all_pairwise(sample.n_groups()),
        &SandwichOptions::default(),
    )
}

pub const MIN_BOOTSTRAP_REPS: usize = 200;
pub const DEFAULT_BOOTSTRAP_REPS: usize = 1000;

#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub reps: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub exec: Execution,
    /// Defaults to all pairwise contrasts.
    pub contrasts: Option<Vec<ContrastSpec>>,
}

impl BootstrapOptions {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            fit: FitOptions::default(),
            exec: Execution::default(),
            contrasts: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub estimates: Vec<ContrastEstimate>,
    /// `reps × contrasts` replicate estimates.
    pub replicates: Array2<f64>,
    /// Resamples discarded because a group was empty or the refit failed.
    pub redraws: usize,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonparametric bootstrap: resample units with replacement, rerun the full
/// pipeline (GPS refit, trimming where the scheme asks for it) and report
/// percentile intervals.
pub fn bootstrap_contrasts(
    sample: &ObservationalSample,
    scheme: &TiltScheme,
    opts: &BootstrapOptions,
) -> Result<BootstrapResult> {
    if opts.reps < MIN_BOOTSTRAP_REPS {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPS} replicates, got {}",
            opts.reps
        )));
    }
    let contrasts = opts
        .contrasts
        .clone()
        .unwrap_or_else(|| ContrastSpec::all_pairwise(sample.n_groups()));
    let full = point_estimates(sample, scheme, &opts.fit, &contrasts)?;
    let cap = 10 * opts.reps;
    let n = sample.n();

    let draws: Vec<(Option<Vec<f64>>, usize)> = map_indices(opts.reps, opts.exec, |b| {
        let mut rng = stream(opts.seed, Purpose::Bootstrap, b as u64);
        let mut redraws = 0;
        while redraws <= cap {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            match sample
                .subset(&idx)
                .and_then(|s| point_estimates(&s, scheme, &opts.fit, &contrasts))
            {
                Ok(values) => return (Some(values), redraws),
                Err(err) => {
                    log::debug!("bootstrap replicate {b}: redrawing ({err})");
                    redraws += 1;
                }
            }
        }
        (None, redraws)
    });

    let redraws: usize = draws.iter().map(|d| d.1).sum();
    if redraws > cap || draws.iter().any(|d| d.0.is_none()) {
        return Err(Error::BootstrapExhausted { redraws });
    }
    if redraws > 0 {
        log::info!("bootstrap redrew {redraws} degenerate resamples");
    }
    let k = contrasts.len();
    let mut replicates = Array2::zeros((opts.reps, k));
    for (b, (values, _)) in draws.into_iter().enumerate() {
        for (c, v) in values.expect("checked above").into_iter().enumerate() {
            replicates[[b, c]] = v;
        }
    }

    let estimates = contrasts
        .iter()
        .zip(&full)
        .enumerate()
        .map(|(c, (spec, &tau))| {
            let mut col = replicates.column(c).to_vec();
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            let (lo, hi) = (quantile_sorted(&col, 0.025), quantile_sorted(&col, 0.975));
            if tau < lo || tau > hi {
                log::warn!("contrast {}: estimate lies outside its percentile interval; widening to include it", spec.label);
            }
            ContrastEstimate {
                spec: spec.clone(),
                tau_hat: tau,
                variance: Some(var),
                ci_low: Some(lo.min(tau)),
                ci_high: Some(hi.max(tau)),
                method: VarianceMethod::Bootstrap,
                n_used: Vec::new(),
            }
        })
        .collect();
    Ok(BootstrapResult {
        estimates,
        replicates,
        redraws,
    })
}

/// All pairwise contrasts with percentile bootstrap intervals.
pub fn bootstrap_pairwise(
    sample: &ObservationalSample,
    scheme: &TiltScheme,
    reps: usize,
    seed: u64,
) -> Result<Vec<ContrastEstimate>> {
    Ok(bootstrap_contrasts(sample, scheme, &BootstrapOptions::new(reps, seed))?.estimates)
}

/// Writes one row per bootstrap replicate with one column per contrast.
pub fn write_bootstrap_replicates(path: impl AsRef<Path>, result: &BootstrapResult) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["replicate".to_string()];
    header.extend(result.estimates.iter().map(|e| e.spec.label.clone()));
    out.write_record(&header)?;
    for (b, row) in result.replicates.outer_iter().enumerate() {
        let mut rec = vec![(b + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
