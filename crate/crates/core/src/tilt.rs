//! Tilting functions `h(X)` and the balancing weights `w_j = h / e_j` they induce.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::data::{ObservationalSample, PropensityMatrix};
use crate::error::{Error, Result};

type Predicate = dyn Fn(ArrayView1<'_, f64>) -> bool + Send + Sync;

/// Covariate predicate for indicator tilts such as "age in 40..65".
#[derive(Clone)]
pub struct IndicatorFn {
    pub name: String,
    predicate: Arc<Predicate>,
}

impl IndicatorFn {
    pub fn new(
        name: impl Into<String>,
        predicate: impl Fn(ArrayView1<'_, f64>) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            predicate: Arc::new(predicate),
        }
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>) -> bool {
        (self.predicate)(x)
    }
}

impl fmt::Debug for IndicatorFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("IndicatorFn").field(&self.name).finish()
    }
}

impl PartialEq for IndicatorFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.predicate, &other.predicate)
    }
}

/// Target population selector. Group indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum TiltScheme {
    /// `h = 1`: inverse probability weights, combined population.
    Combined,
    /// `h = e_j'`: the population of group `j'`.
    Treated(usize),
    /// `h = e_j' Π_j E_j`: group `j'` restricted to units eligible for every group.
    TreatedRestricted(usize),
    /// `h = 1{Σ_j 1/e_j ≤ α}`; `None` computes the optimal threshold from the scores.
    Trimming { alpha: Option<f64> },
    /// `h = min_k e_k`: generalized matching weights.
    Matching,
    /// `h = e_j'(1 − e_j')`.
    VarianceWeighted(usize),
    /// `h = (Σ_k 1/e_k)^{-1}`: generalized overlap weights.
    Overlap,
    /// `h = 1{predicate(X)}`.
    CustomIndicator(IndicatorFn),
}

impl TiltScheme {
    /// True when the weights are differentiable in the propensity scores,
    /// which the sandwich variance requires. Covariate indicators qualify
    /// because they do not depend on the scores at all.
    pub fn is_smooth(&self) -> bool {
        matches!(
            self,
            TiltScheme::Combined
                | TiltScheme::Treated(_)
                | TiltScheme::VarianceWeighted(_)
                | TiltScheme::Overlap
                | TiltScheme::CustomIndicator(_)
        )
    }

    /// `h` for a single score row, for schemes that depend on that row only.
    pub fn row_tilt(&self, e: &[f64]) -> Option<f64> {
        match *self {
            TiltScheme::Combined => Some(1.0),
            TiltScheme::Treated(j) => Some(e[j]),
            TiltScheme::VarianceWeighted(j) => Some(e[j] * (1.0 - e[j])),
            TiltScheme::Matching => Some(e.iter().copied().fold(f64::INFINITY, f64::min)),
            TiltScheme::Overlap => Some(overlap_tilt(e)),
            TiltScheme::Trimming { alpha: Some(a) } => {
                Some(f64::from(u8::from(inverse_sum(e) <= a)))
            }
            _ => None,
        }
    }

    fn group_index(&self) -> Option<usize> {
        match *self {
            TiltScheme::Treated(j)
            | TiltScheme::TreatedRestricted(j)
            | TiltScheme::VarianceWeighted(j) => Some(j),
            _ => None,
        }
    }

    /// Short name used in reports (`ipw`, `overlap`, `treated:2`, …).
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TiltScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TiltScheme::Combined => write!(f, "ipw"),
            TiltScheme::Treated(j) => write!(f, "treated:{}", j + 1),
            TiltScheme::TreatedRestricted(j) => write!(f, "restricted:{}", j + 1),
            TiltScheme::Trimming { alpha: None } => write!(f, "trim"),
            TiltScheme::Trimming { alpha: Some(a) } => write!(f, "trim@{a}"),
            TiltScheme::Matching => write!(f, "matching"),
            TiltScheme::VarianceWeighted(j) => write!(f, "varwt:{}", j + 1),
            TiltScheme::Overlap => write!(f, "overlap"),
            TiltScheme::CustomIndicator(p) => write!(f, "indicator:{}", p.name),
        }
    }
}

impl FromStr for TiltScheme {
    type Err = Error;

    /// Parses `ipw | treated:<j> | restricted:<j> | trim | matching | varwt:<j> | overlap`
    /// with 1-based `j`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidInput(format!(
                "unknown scheme `{s}` (expected ipw, treated:<j>, restricted:<j>, trim, matching, varwt:<j> or overlap)"
            ))
        };
        let group = |v: &str| -> Result<usize> {
            match v.parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j - 1),
                _ => Err(bad()),
            }
        };
        match s.split_once(':') {
            None => match s {
                "ipw" | "combined" => Ok(TiltScheme::Combined),
                "trim" | "trimming" => Ok(TiltScheme::Trimming { alpha: None }),
                "matching" => Ok(TiltScheme::Matching),
                "overlap" => Ok(TiltScheme::Overlap),
                _ => Err(bad()),
            },
            Some(("treated", j)) => Ok(TiltScheme::Treated(group(j)?)),
            Some(("restricted", j)) => Ok(TiltScheme::TreatedRestricted(group(j)?)),
            Some(("varwt", j)) => Ok(TiltScheme::VarianceWeighted(group(j)?)),
            _ => Err(bad()),
        }
    }
}

/// `Σ_j 1/e_j`.
pub fn inverse_sum(e: &[f64]) -> f64 {
    e.iter().map(|v| 1.0 / v).sum()
}

/// Harmonic-mean tilt `(Σ_k 1/e_k)^{-1}`; zero when any score is zero.
pub fn overlap_tilt(e: &[f64]) -> f64 {
    if e.iter().any(|&v| v <= 0.0) {
        0.0
    } else {
        1.0 / inverse_sum(e)
    }
}

/// Optimal trimming threshold on `S_i = Σ_j 1/e_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrimThreshold {
    pub alpha: f64,
    pub kept_fraction: f64,
    /// False when no candidate satisfied the criterion and nothing was trimmed.
    pub satisfied: bool,
}

/// Largest observed `α = S_(k)` with `α ≤ 2·mean(S | S ≤ α) / P̂(S ≤ α)`.
pub fn optimal_alpha(e: &PropensityMatrix) -> Result<TrimThreshold> {
    let sums: Vec<f64> = e
        .scores()
        .outer_iter()
        .map(|r| r.iter().map(|v| 1.0 / v).sum())
        .collect();
    optimal_alpha_from_sums(&sums)
}

/// [`optimal_alpha`] on precomputed inverse-score sums.
pub fn optimal_alpha_from_sums(sums: &[f64]) -> Result<TrimThreshold> {
    let n = sums.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "optimal trimming needs at least two units".into(),
        ));
    }
    let mut sorted = sums.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut best = None;
    let mut prefix = 0.0;
    let mut k = 0;
    while k < n {
        // Candidate α = sorted[k]; include all ties so that {S ≤ α} is exact.
        let alpha = sorted[k];
        while k < n && sorted[k] == alpha {
            prefix += sorted[k];
            k += 1;
        }
        let count = k as f64;
        let cond_mean = prefix / count;
        let prob = count / nf;
        if alpha <= 2.0 * cond_mean / prob {
            best = Some((alpha, count));
        }
    }
    Ok(match best {
        Some((alpha, count)) => TrimThreshold {
            alpha,
            kept_fraction: count / nf,
            satisfied: true,
        },
        None => {
            log::warn!("no trimming threshold satisfies the criterion; keeping all units");
            TrimThreshold {
                alpha: sorted[n - 1],
                kept_fraction: 1.0,
                satisfied: false,
            }
        }
    })
}

/// Empirical eligibility bounds and indicators `E_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eligibility {
    /// `e̲_j = max_l min_{i ∈ l} e_ij`.
    pub lower: Vec<f64>,
    /// `ē_j = min_l max_{i ∈ l} e_ij`.
    pub upper: Vec<f64>,
    /// `n × J` indicators.
    pub indicators: Array2<bool>,
}

impl Eligibility {
    /// True when the unit is eligible for every group.
    pub fn all_eligible(&self, unit: usize) -> bool {
        self.indicators.row(unit).iter().all(|&b| b)
    }
}

pub fn eligibility_indicators(e: &PropensityMatrix, groups: &[usize]) -> Result<Eligibility> {
    let (n, j) = (e.n(), e.n_groups());
    if groups.len() != n {
        return Err(Error::Dimension {
            what: "treatment labels",
            expected: n,
            found: groups.len(),
        });
    }
    let mut min_in = Array2::from_elem((j, j), f64::INFINITY);
    let mut max_in = Array2::from_elem((j, j), f64::NEG_INFINITY);
    let mut counts = vec![0usize; j];
    for (row, &g) in e.scores().outer_iter().zip(groups) {
        counts[g] += 1;
        for (k, &v) in row.iter().enumerate() {
            min_in[[g, k]] = min_in[[g, k]].min(v);
            max_in[[g, k]] = max_in[[g, k]].max(v);
        }
    }
    if counts.contains(&1) {
        log::warn!("a group with a single unit makes the eligibility bounds degenerate");
    }
    let observed: Vec<usize> = (0..j).filter(|&l| counts[l] > 0).collect();
    let lower: Vec<f64> = (0..j)
        .map(|k| {
            observed
                .iter()
                .map(|&l| min_in[[l, k]])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let upper: Vec<f64> = (0..j)
        .map(|k| {
            observed
                .iter()
                .map(|&l| max_in[[l, k]])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let indicators = Array2::from_shape_fn((n, j), |(i, k)| {
        let v = e.row(i)[k];
        lower[k] <= v && v <= upper[k]
    });
    Ok(Eligibility {
        lower,
        upper,
        indicators,
    })
}

/// Tilt values, per-group weights and the kept mask for one scheme.
#[derive(Debug, Clone)]
pub struct WeightSet {
    /// Unnormalised tilt `h_i ≥ 0`.
    pub h: Vec<f64>,
    /// `w_ij = h_i / e_ij`; only `w_{i, Z_i}` enters the estimators.
    pub w: Array2<f64>,
    /// False for units with `h_i = 0`.
    pub kept: Vec<bool>,
    pub scheme: TiltScheme,
    pub trim: Option<TrimThreshold>,
}

impl WeightSet {
    /// Unit weights everywhere (`h = 1`, `w = 1`): the unweighted sample.
    pub fn uniform(n: usize, n_groups: usize) -> Self {
        Self {
            h: vec![1.0; n],
            w: Array2::ones((n, n_groups)),
            kept: vec![true; n],
            scheme: TiltScheme::Combined,
            trim: None,
        }
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn n_groups(&self) -> usize {
        self.w.ncols()
    }

    /// Weight of unit `i` for its own group.
    pub fn own_weight(&self, unit: usize, group: usize) -> f64 {
        self.w[[unit, group]]
    }

    /// Weights multiplied by a positive constant (same target population).
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            h: self.h.iter().map(|v| v * c).collect(),
            w: &self.w * c,
            ..self.clone()
        }
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn h_sum(&self) -> f64 {
        self.h.iter().sum()
    }
}

/// Evaluates the scheme's tilt on every unit and forms `w_ij = h_i / e_ij`.
pub fn compute_tilt(
    scheme: &TiltScheme,
    e: &PropensityMatrix,
    sample: &ObservationalSample,
) -> Result<WeightSet> {
    let (n, j) = (e.n(), e.n_groups());
    if sample.n() != n {
        return Err(Error::Dimension {
            what: "propensity rows",
            expected: sample.n(),
            found: n,
        });
    }
    if sample.n_groups() != j {
        return Err(Error::Dimension {
            what: "propensity columns",
            expected: sample.n_groups(),
            found: j,
        });
    }
    if let Some(g) = scheme.group_index() {
        if g >= j {
            return Err(Error::InvalidInput(format!(
                "scheme `{scheme}` refers to group {} but there are {j} groups",
                g + 1
            )));
        }
    }
    let row = |i: usize| e.row(i).to_vec();
    let mut trim = None;
    let h: Vec<f64> = match scheme {
        TiltScheme::Trimming { alpha } => {
            let threshold = match alpha {
                Some(a) => {
                    let kept = (0..n).filter(|&i| inverse_sum(&row(i)) <= *a).count();
                    TrimThreshold {
                        alpha: *a,
                        kept_fraction: kept as f64 / n as f64,
                        satisfied: true,
                    }
                }
                None => optimal_alpha(e)?,
            };
            trim = Some(threshold);
            (0..n)
                .map(|i| f64::from(u8::from(inverse_sum(&row(i)) <= threshold.alpha)))
                .collect()
        }
        TiltScheme::TreatedRestricted(g) => {
            let elig = eligibility_indicators(e, sample.groups())?;
            (0..n)
                .map(|i| {
                    if elig.all_eligible(i) {
                        e.row(i)[*g]
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        TiltScheme::CustomIndicator(pred) => (0..n)
            .map(|i| f64::from(u8::from(pred.eval(sample.covariate(i)))))
            .collect(),
        other => (0..n)
            .map(|i| other.row_tilt(&row(i)).expect("row-local scheme"))
            .collect(),
    };
    let w = Array2::from_shape_fn((n, j), |(i, k)| h[i] / e.row(i)[k]);
    let kept = h.iter().map(|&v| v > 0.0).collect();
    Ok(WeightSet {
        h,
        w,
        kept,
        scheme: scheme.clone(),
        trim,
    })
}

#[derive(Serialize)]
struct WeightSidecar<'a> {
    scheme: String,
    trim: Option<TrimThreshold>,
    kept: usize,
    n: usize,
    labels: &'a [String],
}

/// Writes `unit_id, group, h, w, kept` (own-group weight) and a JSON sidecar
/// with the scheme metadata next to it (`<path>.json`).
pub fn write_weights(
    path: impl AsRef<Path>,
    ws: &WeightSet,
    sample: &ObservationalSample,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["unit_id", "group", "h", "w", "kept"])?;
    for i in 0..ws.n() {
        let g = sample.groups()[i];
        out.write_record([
            (i + 1).to_string(),
            (g + 1).to_string(),
            ws.h[i].to_string(),
            ws.own_weight(i, g).to_string(),
            ws.kept[i].to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = WeightSidecar {
        scheme: ws.scheme.to_string(),
        trim: ws.trim,
        kept: ws.kept_count(),
        n: ws.n(),
        labels: sample.labels(),
    };
    let side_path = path.with_extension("json");
    std::fs::write(&side_path, serde_json::to_string_pretty(&sidecar)?)
        .map_err(|e| Error::io(&side_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ScoreSource;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn pm(rows: Array2<f64>) -> PropensityMatrix {
        PropensityMatrix::new(rows, ScoreSource::TrueScores).unwrap()
    }

    fn sample_for(n: usize, groups: Vec<usize>, j: usize) -> ObservationalSample {
        ObservationalSample::new(
            Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
            vec!["x".into()],
            groups,
            (1..=j).map(|g| g.to_string()).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn overlap_reduces_to_binary_overlap_weights() {
        let e = pm(array![[0.3, 0.7], [0.6, 0.4]]);
        let ws = compute_tilt(&TiltScheme::Overlap, &e, &sample_for(2, vec![0, 1], 2)).unwrap();
        // h = e1 e2 for J = 2, so w = (e2, e1).
        assert_abs_diff_eq!(ws.w[[0, 0]], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.w[[0, 1]], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.w[[1, 0]], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn overlap_at_uniform_and_near_edge() {
        let t = 1.0 / 3.0;
        let h = TiltScheme::Overlap.row_tilt(&[t, t, t]).unwrap();
        assert_abs_diff_eq!(h, 1.0 / 9.0, epsilon = 1e-16);
        assert_abs_diff_eq!(h / t, t, epsilon = 1e-15);
        let edge = [0.49999, 0.49999, 2e-5];
        let h = TiltScheme::Overlap.row_tilt(&edge).unwrap();
        assert!((0.9999..=1.0001).contains(&(h / edge[2])));
    }

    #[test]
    fn matching_and_ipw_rows() {
        let s = ObservationalSample::new(
            array![[0.0], [1.0], [2.0]],
            vec!["x".into()],
            vec![0, 1, 2],
            vec!["a".into(), "b".into(), "c".into()],
            None,
        )
        .unwrap();
        let rows = array![[0.2, 0.5, 0.3], [0.2, 0.5, 0.3], [0.2, 0.5, 0.3]];
        let e3 = pm(rows);
        let ws = compute_tilt(&TiltScheme::Matching, &e3, &s).unwrap();
        assert_abs_diff_eq!(ws.h[0], 0.2);
        assert_abs_diff_eq!(ws.w[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.w[[0, 1]], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.w[[0, 2]], 2.0 / 3.0, epsilon = 1e-15);
        let ipw = compute_tilt(&TiltScheme::Combined, &e3, &s).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(ipw.w[[0, k]], 1.0 / e3.row(0)[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_scores_keep_everything() {
        let t = 1.0 / 3.0;
        let e = pm(Array2::from_elem((10, 3), t));
        let a = optimal_alpha(&e).unwrap();
        assert!(a.satisfied);
        assert_abs_diff_eq!(a.alpha, 9.0, epsilon = 1e-12);
        assert_eq!(a.kept_fraction, 1.0);
    }

    /// Exhaustive scan of every candidate, written independently of the
    /// sorted prefix-sum pass.
    fn brute_force_alpha(sums: &[f64]) -> Option<f64> {
        let n = sums.len() as f64;
        sums.iter()
            .copied()
            .filter(|&a| {
                let below: Vec<f64> = sums.iter().copied().filter(|&s| s <= a).collect();
                let m = below.iter().sum::<f64>() / below.len() as f64;
                a <= 2.0 * m / (below.len() as f64 / n)
            })
            .fold(None, |best: Option<f64>, a| {
                Some(best.map_or(a, |b| b.max(a)))
            })
    }

    #[test]
    fn two_point_distribution_matches_exhaustive_scan() {
        // Lower mass at 9, upper at 60: α = 60 needs 60 ≤ 2·mean, which fails,
        // so the threshold falls back to 9.
        let mut sums = vec![9.0; 8];
        sums.extend([60.0, 60.0]);
        let got = optimal_alpha_from_sums(&sums).unwrap();
        assert_eq!(Some(got.alpha), brute_force_alpha(&sums));
        assert_abs_diff_eq!(got.alpha, 9.0);
        assert_abs_diff_eq!(got.kept_fraction, 0.8);
        // A milder upper point is kept.
        let mut sums = vec![9.0; 8];
        sums.extend([20.0, 20.0]);
        let got = optimal_alpha_from_sums(&sums).unwrap();
        assert_eq!(Some(got.alpha), brute_force_alpha(&sums));
        assert_eq!(got.kept_fraction, 1.0);
    }

    #[test]
    fn alpha_matches_exhaustive_scan_on_random_sums() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let sums: Vec<f64> = (0..n)
                .map(|_| 9.0 + rng.random::<f64>().powi(4) * 200.0)
                .collect();
            let got = optimal_alpha_from_sums(&sums).unwrap();
            assert_eq!(Some(got.alpha), brute_force_alpha(&sums));
        }
    }

    #[test]
    fn trimming_is_idempotent_on_the_kept_subsample() {
        let mut sums = vec![9.0, 9.5, 10.0, 12.0, 15.0, 40.0, 300.0];
        let a = optimal_alpha_from_sums(&sums).unwrap();
        sums.retain(|&s| s <= a.alpha);
        let again = optimal_alpha_from_sums(&sums).unwrap();
        assert_eq!(again.kept_fraction, 1.0);
    }

    #[test]
    fn eligibility_bounds_match_exhaustive_minmax() {
        let e = pm(array![
            [0.2, 0.8],
            [0.5, 0.5],
            [0.9, 0.1],
            [0.3, 0.7],
            [0.6, 0.4],
            [0.05, 0.95]
        ]);
        let groups = vec![0, 0, 0, 1, 1, 1];
        let el = eligibility_indicators(&e, &groups).unwrap();
        // group 0 has e_1 in [0.2, 0.9], group 1 in [0.05, 0.6].
        assert_abs_diff_eq!(el.lower[0], 0.2);
        assert_abs_diff_eq!(el.upper[0], 0.6);
        assert_abs_diff_eq!(el.lower[1], 0.4);
        assert_abs_diff_eq!(el.upper[1], 0.8);
        let expect = [true, true, false, true, true, false];
        for (i, &ok) in expect.iter().enumerate() {
            assert_eq!(el.all_eligible(i), ok, "unit {i}");
        }
        let same = pm(Array2::from_elem((4, 2), 0.5));
        let el = eligibility_indicators(&same, &[0, 1, 0, 1]).unwrap();
        assert!(el.indicators.iter().all(|&b| b));
    }

    #[test]
    fn restricted_tilt_drops_ineligible_units() {
        let e = pm(array![
            [0.2, 0.8],
            [0.5, 0.5],
            [0.9, 0.1],
            [0.3, 0.7],
            [0.6, 0.4],
            [0.05, 0.95]
        ]);
        let s = sample_for(6, vec![0, 0, 0, 1, 1, 1], 2);
        let ws = compute_tilt(&TiltScheme::TreatedRestricted(1), &e, &s).unwrap();
        assert_eq!(ws.kept, [true, true, false, true, true, false]);
        assert_abs_diff_eq!(ws.h[0], 0.8);
    }

    #[test]
    fn custom_indicator_uses_covariates() {
        let e = pm(Array2::from_elem((4, 2), 0.5));
        let s = sample_for(4, vec![0, 1, 0, 1], 2);
        let scheme = TiltScheme::CustomIndicator(IndicatorFn::new("x>=2", |x| x[0] >= 2.0));
        let ws = compute_tilt(&scheme, &e, &s).unwrap();
        assert_eq!(ws.kept, [false, false, true, true]);
        assert_eq!(ws.w[[2, 0]], 2.0);
    }

    #[test]
    fn scheme_strings_round_trip() {
        for s in [
            "ipw",
            "treated:2",
            "restricted:1",
            "trim",
            "matching",
            "varwt:3",
            "overlap",
        ] {
            assert_eq!(s.parse::<TiltScheme>().unwrap().to_string(), s);
        }
        assert!("treated:0".parse::<TiltScheme>().is_err());
        assert!("nope".parse::<TiltScheme>().is_err());
    }

    #[test]
    fn out_of_range_group_is_rejected() {
        let e = pm(Array2::from_elem((2, 2), 0.5));
        let s = sample_for(2, vec![0, 1], 2);
        assert!(compute_tilt(&TiltScheme::Treated(2), &e, &s).is_err());
    }
}
