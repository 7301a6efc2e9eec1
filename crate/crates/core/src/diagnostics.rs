//! Covariate balance, effective sample size and rank-and-replace.

use std::path::Path;

use serde::Serialize;

use crate::data::ObservationalSample;
use crate::error::{Error, Result};
use crate::parallel::{map_indices, Execution};
use crate::tilt::WeightSet;

/// Conventional cut-off for adequate balance. Reported, never enforced.
pub const BALANCE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairBalance {
    /// 0-based group indices, `first < second`.
    pub first: usize,
    pub second: usize,
    pub asd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateBalance {
    pub covariate: String,
    /// Weighted group means `X̄_j`.
    pub group_means: Vec<f64>,
    /// `X̄_p`: `h`-weighted mean over all kept units.
    pub target_mean: f64,
    /// `S_X`: root of the average unweighted within-group variance.
    pub pooled_sd: f64,
    pub psd: Vec<f64>,
    pub max_psd: f64,
    pub asd: Vec<PairBalance>,
    pub max_asd: f64,
    /// True when `S_X = 0`; the metrics are then reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub scheme: String,
    pub labels: Vec<String>,
    pub covariates: Vec<CovariateBalance>,
    pub max_psd: f64,
    pub max_asd: f64,
    pub threshold: f64,
}

impl BalanceReport {
    /// Covariates whose largest metric exceeds the threshold.
    pub fn flagged(&self) -> Vec<&str> {
        self.covariates
            .iter()
            .filter(|c| c.max_psd.max(c.max_asd) > self.threshold)
            .map(|c| c.covariate.as_str())
            .collect()
    }
}

pub fn balance_report(sample: &ObservationalSample, weights: &WeightSet) -> Result<BalanceReport> {
    balance_report_with(sample, weights, Execution::default())
}

/// [`balance_report`] with an explicit execution policy over covariates.
pub fn balance_report_with(
    sample: &ObservationalSample,
    weights: &WeightSet,
    exec: Execution,
) -> Result<BalanceReport> {
    let j = sample.n_groups();
    if weights.n() != sample.n() || weights.n_groups() != j {
        return Err(Error::Dimension {
            what: "weight set",
            expected: sample.n(),
            found: weights.n(),
        });
    }
    let groups = sample.groups();
    let mut kept_per_group = vec![0usize; j];
    for (i, &g) in groups.iter().enumerate() {
        if weights.kept[i] {
            kept_per_group[g] += 1;
        }
    }
    if let Some(g) = kept_per_group.iter().position(|&c| c == 0) {
        return Err(Error::ZeroWeightMass {
            group: sample.labels()[g].clone(),
            scheme: weights.scheme.to_string(),
        });
    }

    let names = sample.covariate_names();
    let covariates = map_indices(sample.n_covariates(), exec, |c| {
        let x = sample.covariates().column(c).to_owned();
        let mut wsum = vec![0.0; j];
        let mut wx = vec![0.0; j];
        let mut sum = vec![0.0; j];
        let (mut hsum, mut hx) = (0.0, 0.0);
        for (i, &g) in groups.iter().enumerate() {
            if !weights.kept[i] {
                continue;
            }
            let w = weights.own_weight(i, g);
            wsum[g] += w;
            wx[g] += w * x[i];
            sum[g] += x[i];
            hsum += weights.h[i];
            hx += weights.h[i] * x[i];
        }
        let group_means: Vec<f64> = (0..j).map(|g| wx[g] / wsum[g]).collect();
        let target_mean = hx / hsum;
        let raw_mean: Vec<f64> = (0..j).map(|g| sum[g] / kept_per_group[g] as f64).collect();
        let mut ss = vec![0.0; j];
        for (i, &g) in groups.iter().enumerate() {
            if weights.kept[i] {
                ss[g] += (x[i] - raw_mean[g]).powi(2);
            }
        }
        let pooled_var = (0..j)
            .map(|g| {
                let m = kept_per_group[g];
                if m > 1 {
                    ss[g] / (m - 1) as f64
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / j as f64;
        let pooled_sd = pooled_var.sqrt();
        let degenerate = pooled_sd <= 0.0 || !pooled_sd.is_finite();
        let std = |d: f64| if degenerate { 0.0 } else { d.abs() / pooled_sd };
        let psd: Vec<f64> = group_means.iter().map(|m| std(m - target_mean)).collect();
        let mut asd = Vec::with_capacity(j * (j - 1) / 2);
        for a in 0..j {
            for b in a + 1..j {
                asd.push(PairBalance {
                    first: a,
                    second: b,
                    asd: std(group_means[a] - group_means[b]),
                });
            }
        }
        CovariateBalance {
            covariate: names[c].clone(),
            max_psd: psd.iter().copied().fold(0.0, f64::max),
            max_asd: asd.iter().map(|p| p.asd).fold(0.0, f64::max),
            group_means,
            target_mean,
            pooled_sd,
            psd,
            asd,
            degenerate,
        }
    });
    for c in covariates.iter().filter(|c| c.degenerate) {
        log::warn!(
            "covariate `{}` has zero pooled variance; its balance metrics are reported as 0",
            c.covariate
        );
    }
    Ok(BalanceReport {
        scheme: weights.scheme.to_string(),
        labels: sample.labels().to_vec(),
        max_psd: covariates.iter().map(|c| c.max_psd).fold(0.0, f64::max),
        max_asd: covariates.iter().map(|c| c.max_asd).fold(0.0, f64::max),
        covariates,
        threshold: BALANCE_THRESHOLD,
    })
}

/// Writes one row per covariate: PSD per group, max PSD, ASD per pair, max ASD.
pub fn write_balance_csv(path: impl AsRef<Path>, report: &BalanceReport) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["covariate".to_string()];
    header.extend(report.labels.iter().map(|l| format!("psd_{l}")));
    header.push("max_psd".into());
    if let Some(first) = report.covariates.first() {
        header.extend(
            first
                .asd
                .iter()
                .map(|p| format!("asd_{}_{}", report.labels[p.first], report.labels[p.second])),
        );
    }
    header.extend(["max_asd".into(), "degenerate".into()]);
    out.write_record(&header)?;
    for c in &report.covariates {
        let mut row = vec![c.covariate.clone()];
        row.extend(c.psd.iter().map(|v| v.to_string()));
        row.push(c.max_psd.to_string());
        row.extend(c.asd.iter().map(|p| p.asd.to_string()));
        row.push(c.max_asd.to_string());
        row.push(c.degenerate.to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Long-format rows `scheme, covariate, metric, comparison, value` for boxplots
/// of balance across covariates.
pub fn write_balance_plot_data(path: impl AsRef<Path>, reports: &[BalanceReport]) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["scheme", "covariate", "metric", "comparison", "value"])?;
    for r in reports {
        for c in &r.covariates {
            for (g, v) in c.psd.iter().enumerate() {
                out.write_record([&r.scheme, &c.covariate, "PSD", &r.labels[g], &v.to_string()])?;
            }
            for p in &c.asd {
                let cmp = format!("{}-{}", r.labels[p.first], r.labels[p.second]);
                out.write_record([&r.scheme, &c.covariate, "ASD", &cmp, &p.asd.to_string()])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveSampleSize {
    /// `(Σ_{i∈j} w_ij)² / Σ_{i∈j} w_ij²` over kept units; 0 for an empty group.
    pub per_group: Vec<f64>,
    pub total: f64,
    /// Kept units per group.
    pub n_kept: Vec<usize>,
}

/// Per-group effective sample sizes from each unit's own-group weight.
pub fn effective_sample_size(weights: &WeightSet, groups: &[usize]) -> Result<EffectiveSampleSize> {
    let j = weights.n_groups();
    if groups.len() != weights.n() {
        return Err(Error::Dimension {
            what: "treatment labels",
            expected: weights.n(),
            found: groups.len(),
        });
    }
    let mut s1 = vec![0.0; j];
    let mut s2 = vec![0.0; j];
    let mut n_kept = vec![0usize; j];
    for (i, &g) in groups.iter().enumerate() {
        if !weights.kept[i] {
            continue;
        }
        let w = weights.own_weight(i, g);
        s1[g] += w;
        s2[g] += w * w;
        n_kept[g] += 1;
    }
    let per_group: Vec<f64> = (0..j)
        .map(|g| {
            if s2[g] > 0.0 {
                s1[g] * s1[g] / s2[g]
            } else {
                0.0
            }
        })
        .collect();
    Ok(EffectiveSampleSize {
        total: per_group.iter().sum(),
        per_group,
        n_kept,
    })
}

/// Single pooled ratio `(Σ_j Σ_{i∈j} w_ij)² / Σ_j Σ_{i∈j} w_ij²` over all kept units.
pub fn effective_sample_size_pooled(weights: &WeightSet, groups: &[usize]) -> Result<f64> {
    if groups.len() != weights.n() {
        return Err(Error::Dimension {
            what: "treatment labels",
            expected: weights.n(),
            found: groups.len(),
        });
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for (i, &g) in groups.iter().enumerate() {
        if weights.kept[i] {
            let w = weights.own_weight(i, g);
            s1 += w;
            s2 += w * w;
        }
    }
    Ok(if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 })
}

/// Replaces each unit's index value by the unweighted within-group quantile
/// at its weighted rank.
///
/// Units are sorted by value within their group (ties keep input order). The
/// weighted rank of the `k`-th unit is the midpoint of its weight interval,
/// `F_{k-1} + w_k / (2W)`, and the replacement is the left-continuous
/// empirical quantile of the group's original values at that rank. The
/// weighted CDF of the replaced values then differs from the unweighted CDF
/// of the originals by at most `max_k w_k / (2W)`.
pub fn rank_and_replace(index: &[f64], weights: &WeightSet, groups: &[usize]) -> Result<Vec<f64>> {
    let n = index.len();
    if weights.n() != n || groups.len() != n {
        return Err(Error::Dimension {
            what: "index values",
            expected: weights.n(),
            found: n,
        });
    }
    if let Some(i) = index.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "index value for unit {} is not finite",
            i + 1
        )));
    }
    let mut out = index.to_vec();
    for g in 0..weights.n_groups() {
        let mut members: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        // Stable sort: ties keep their input order.
        members.sort_by(|&a, &b| index[a].total_cmp(&index[b]));
        let sorted: Vec<f64> = members.iter().map(|&i| index[i]).collect();
        let w: Vec<f64> = members
            .iter()
            .map(|&i| {
                if weights.kept[i] {
                    weights.own_weight(i, g)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeightMass {
                group: (g + 1).to_string(),
                scheme: weights.scheme.to_string(),
            });
        }
        let m = members.len();
        let mut cum = 0.0;
        for (k, &unit) in members.iter().enumerate() {
            let u = (cum + 0.5 * w[k]) / total;
            cum += w[k];
            let pos = ((u * m as f64).ceil() as usize).clamp(1, m);
            out[unit] = sorted[pos - 1];
        }
    }
    Ok(out)
}
