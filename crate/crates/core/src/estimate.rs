//! Hájek estimators of weighted group means and their linear contrasts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ContrastSpec, ObservationalSample};
use crate::error::{Error, Result};
use crate::tilt::WeightSet;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeanEstimate {
    /// 0-based group index.
    pub group: usize,
    pub m_hat: f64,
    pub sum_weights: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    Sandwich,
    Bootstrap,
    None,
}

impl std::fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VarianceMethod::Sandwich => "sandwich",
            VarianceMethod::Bootstrap => "bootstrap",
            VarianceMethod::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate {
    pub spec: ContrastSpec,
    pub tau_hat: f64,
    pub variance: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub method: VarianceMethod,
    /// Kept units per group that entered the estimate.
    pub n_used: Vec<usize>,
}

impl ContrastEstimate {
    pub fn se(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }

    /// Attaches a variance and the matching normal-theory 95% interval.
    pub fn with_normal_interval(mut self, variance: f64) -> Self {
        let half = Z_975 * variance.sqrt();
        self.variance = Some(variance);
        self.ci_low = Some(self.tau_hat - half);
        self.ci_high = Some(self.tau_hat + half);
        self.method = VarianceMethod::Sandwich;
        self
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        Some(self.ci_low? <= truth && truth <= self.ci_high?)
    }
}

/// `m̂_j = Σ D_ij w_ij Y_i / Σ D_ij w_ij` over kept units.
pub fn weighted_group_means(
    sample: &ObservationalSample,
    weights: &WeightSet,
) -> Result<Vec<GroupMeanEstimate>> {
    let y = sample.outcome()?;
    let j = sample.n_groups();
    if weights.n() != sample.n() || weights.n_groups() != j {
        return Err(Error::Dimension {
            what: "weight set",
            expected: sample.n(),
            found: weights.n(),
        });
    }
    let mut num = vec![0.0; j];
    let mut den = vec![0.0; j];
    let mut used = vec![0usize; j];
    for (i, &g) in sample.groups().iter().enumerate() {
        if !weights.kept[i] {
            continue;
        }
        let w = weights.own_weight(i, g);
        num[g] += w * y[i];
        den[g] += w;
        used[g] += 1;
    }
    (0..j)
        .map(|g| {
            if den[g] <= 0.0 || used[g] == 0 {
                return Err(Error::ZeroWeightMass {
                    group: sample.labels()[g].clone(),
                    scheme: weights.scheme.to_string(),
                });
            }
            if used[g] == 1 {
                log::warn!(
                    "group {} has a single kept unit; its variance is unreliable",
                    sample.labels()[g]
                );
            }
            Ok(GroupMeanEstimate {
                group: g,
                m_hat: num[g] / den[g],
                sum_weights: den[g],
                n_used: used[g],
            })
        })
        .collect()
}

/// `τ̂ = Σ_j a_j m̂_j` with no variance attached.
pub fn estimate_contrast(
    means: &[GroupMeanEstimate],
    spec: &ContrastSpec,
) -> Result<ContrastEstimate> {
    let m: Vec<f64> = means.iter().map(|g| g.m_hat).collect();
    Ok(ContrastEstimate {
        spec: spec.clone(),
        tau_hat: spec.apply(&m)?,
        variance: None,
        ci_low: None,
        ci_high: None,
        method: VarianceMethod::None,
        n_used: means.iter().map(|g| g.n_used).collect(),
    })
}

pub fn estimate_contrasts(
    means: &[GroupMeanEstimate],
    specs: &[ContrastSpec],
) -> Result<Vec<ContrastEstimate>> {
    specs.iter().map(|s| estimate_contrast(means, s)).collect()
}

/// Every pairwise contrast `(j, k)`, `j < k`, without variances.
pub fn all_pairwise(
    sample: &ObservationalSample,
    weights: &WeightSet,
) -> Result<Vec<ContrastEstimate>> {
    let means = weighted_group_means(sample, weights)?;
    estimate_contrasts(&means, &ContrastSpec::all_pairwise(sample.n_groups()))
}

/// Raw pairwise differences in group means, with the unweighted two-sample
/// variance `Σ_{i∈j} r_i²/n_j² + Σ_{i∈k} r_i²/n_k²` and a normal interval.
pub fn difference_in_means(sample: &ObservationalSample) -> Result<Vec<ContrastEstimate>> {
    let y = sample.outcome()?;
    let j = sample.n_groups();
    let uniform = WeightSet::uniform(sample.n(), j);
    let means = weighted_group_means(sample, &uniform)?;
    let mut rss = vec![0.0; j];
    for (i, &g) in sample.groups().iter().enumerate() {
        rss[g] += (y[i] - means[g].m_hat).powi(2);
    }
    let var_mean: Vec<f64> = (0..j)
        .map(|g| rss[g] / (means[g].n_used as f64).powi(2))
        .collect();
    ContrastSpec::all_pairwise(j)
        .iter()
        .map(|spec| {
            let est = estimate_contrast(&means, spec)?;
            let v = spec.a.iter().zip(&var_mean).map(|(a, v)| a * a * v).sum();
            Ok(est.with_normal_interval(v))
        })
        .collect()
}

/// Writes `contrast, tau_hat, se, ci_low, ci_high, method, n_used_<label>…`.
pub fn write_estimates_csv(
    path: impl AsRef<Path>,
    estimates: &[ContrastEstimate],
    labels: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec![
        "contrast".to_string(),
        "tau_hat".into(),
        "se".into(),
        "ci_low".into(),
        "ci_high".into(),
        "method".into(),
    ];
    header.extend(labels.iter().map(|l| format!("n_used_{l}")));
    out.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in estimates {
        let mut row = vec![
            e.spec.label.clone(),
            e.tau_hat.to_string(),
            opt(e.se()),
            opt(e.ci_low),
            opt(e.ci_high),
            e.method.to_string(),
        ];
        row.extend(e.n_used.iter().map(|n| n.to_string()));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
