//! Three-group simulation design with six covariates.
//!
//! `X1..X3` are trivariate normal, `X4 ~ U[-3, 3]`, `X5 ~ χ²₁` and
//! `X6 ~ Bernoulli(0.5)`. Assignment follows a multinomial logit with
//! slopes `κ_j β_j`, and potential outcomes are linear in `(1, X)` with a
//! shared standard normal error.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationalSample, PropensityMatrix, ScoreSource};
use crate::error::{Error, Result};
use crate::gps::softmax_in_place;
use crate::rng::{stream, Purpose, StreamRng};

pub const N_COVARIATES: usize = 6;
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = ["X1", "X2", "X3", "X4", "X5", "X6"];
pub const PRESETS: [&str; 2] = ["adequate_overlap", "lack_of_overlap"];

/// `E[X4], E[X5], E[X6]`.
const NON_NORMAL_MEANS: [f64; 3] = [0.0, 1.0, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub name: String,
    pub n: usize,
    /// Slope multipliers `κ_2, …, κ_J`.
    pub kappa: Vec<f64>,
    /// Slope directions `β_2, …, β_J`, one row of six per non-reference group.
    pub beta: Vec<Vec<f64>>,
    /// Intercepts `α_2, …, α_J`; calibrated to `target_shares` when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    pub target_shares: Vec<f64>,
    /// Outcome coefficients on `(1, X1, …, X6)`, one row per group.
    pub gamma: Vec<Vec<f64>>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    pub normal_mean: [f64; 3],
    /// Pairwise covariances `(Cov12, Cov13, Cov23)` with unit variances.
    #[serde(default = "default_pairwise_cov")]
    pub normal_pairwise_cov: [f64; 3],
    /// Full 3×3 covariance of `X1..X3`; overrides `normal_pairwise_cov`.
    #[serde(default)]
    pub normal_cov: Option<[[f64; 3]; 3]>,
    /// Smallest eigenvalue kept when an invalid covariance is clipped.
    #[serde(default = "default_eigenvalue_floor")]
    pub eigenvalue_floor: f64,
    #[serde(default = "default_calibration_draws")]
    pub calibration_draws: usize,
    #[serde(default = "default_calibration_seed")]
    pub calibration_seed: u64,
}

fn default_noise_sd() -> f64 {
    1.0
}
fn default_pairwise_cov() -> [f64; 3] {
    [1.0, -1.0, -0.5]
}
fn default_eigenvalue_floor() -> f64 {
    1e-3
}
fn default_calibration_draws() -> usize {
    200_000
}
fn default_calibration_seed() -> u64 {
    20_190_101
}

impl DgpSpec {
    fn base(name: &str, kappa: [f64; 2]) -> Self {
        Self {
            name: name.into(),
            n: 1500,
            kappa: kappa.to_vec(),
            beta: vec![vec![1.0, 1.0, 1.0, -1.0, -1.0, 1.0], vec![1.0; 6]],
            alpha: None,
            target_shares: vec![0.3, 0.4, 0.3],
            gamma: vec![
                vec![-1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
                vec![-4.0, 2.0, 3.0, 1.0, 2.0, 2.0, 2.0],
                vec![3.0, 3.0, 1.0, 2.0, -1.0, -1.0, -1.0],
            ],
            noise_sd: default_noise_sd(),
            normal_mean: [2.0, 1.0, 1.0],
            normal_pairwise_cov: default_pairwise_cov(),
            normal_cov: None,
            eigenvalue_floor: default_eigenvalue_floor(),
            calibration_draws: default_calibration_draws(),
            calibration_seed: default_calibration_seed(),
        }
    }

    pub fn adequate_overlap() -> Self {
        Self::base("adequate_overlap", [0.2, 0.1])
    }

    pub fn lack_of_overlap() -> Self {
        Self::base("lack_of_overlap", [0.8, 0.4])
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "adequate_overlap" => Ok(Self::adequate_overlap()),
            "lack_of_overlap" => Ok(Self::lack_of_overlap()),
            _ => Err(Error::InvalidInput(format!(
                "unknown preset `{name}`; available presets: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_groups(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.n_groups();
        let bad = |m: String| Err(Error::InvalidInput(m));
        if j < 2 {
            return bad("at least two outcome rows are required".into());
        }
        if self.kappa.len() != j - 1 || self.beta.len() != j - 1 {
            return bad(format!(
                "kappa and beta need {} entries for {j} groups",
                j - 1
            ));
        }
        if self.beta.iter().any(|b| b.len() != N_COVARIATES) {
            return bad(format!("each beta row needs {N_COVARIATES} entries"));
        }
        if self.gamma.iter().any(|g| g.len() != N_COVARIATES + 1) {
            return bad(format!("each gamma row needs {} entries", N_COVARIATES + 1));
        }
        if let Some(a) = &self.alpha {
            if a.len() != j - 1 {
                return bad(format!("alpha needs {} entries", j - 1));
            }
        }
        if self.target_shares.len() != j
            || self.target_shares.iter().any(|&t| t <= 0.0)
            || (self.target_shares.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("target_shares must be positive and sum to 1".into());
        }
        if self.n < 2 || self.noise_sd.is_nan() || self.noise_sd < 0.0 {
            return bad("n must be at least 2 and noise_sd non-negative".into());
        }
        Ok(())
    }

    /// The raw covariance of `X1..X3` before any projection.
    pub fn raw_covariance(&self) -> [[f64; 3]; 3] {
        self.normal_cov.unwrap_or_else(|| {
            let [c12, c13, c23] = self.normal_pairwise_cov;
            [[1.0, c12, c13], [c12, 1.0, c23], [c13, c23, 1.0]]
        })
    }

    /// Resolves the covariance, projecting onto the PSD cone if needed, and
    /// calibrates missing intercepts.
    pub fn build(&self) -> Result<Dgp> {
        self.validate()?;
        let covariance = resolve_covariance(self.raw_covariance(), self.eigenvalue_floor)?;
        let mut dgp = Dgp {
            spec: self.clone(),
            alpha: self
                .alpha
                .clone()
                .unwrap_or_else(|| vec![0.0; self.n_groups() - 1]),
            covariance,
        };
        if self.alpha.is_none() {
            dgp.alpha =
                calibrate_intercepts_for(&dgp, &self.target_shares, self.calibration_draws)?;
        }
        Ok(dgp)
    }
}

/// Covariance of the normal block actually used for sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedCovariance {
    pub requested: [[f64; 3]; 3],
    pub matrix: [[f64; 3]; 3],
    /// Eigenvalues of the requested matrix, ascending.
    pub requested_eigenvalues: [f64; 3],
    /// True when the requested matrix had a negative eigenvalue and was clipped.
    pub projected: bool,
    /// `L` with `L Lᵀ = matrix`.
    #[serde(skip)]
    pub factor: [[f64; 3]; 3],
}

/// Eigen-decomposes a symmetric 3×3 matrix. A matrix with a negative
/// eigenvalue is replaced by the nearest matrix (in Frobenius norm) whose
/// eigenvalues are at least `floor`; valid matrices are used as given.
///
/// A zero floor gives the nearest PSD matrix, which is singular and makes one
/// normal covariate an exact affine function of the other two.
pub fn resolve_covariance(requested: [[f64; 3]; 3], floor: f64) -> Result<ResolvedCovariance> {
    if floor.is_nan() || floor < 0.0 {
        return Err(Error::InvalidInput(
            "eigenvalue floor must be non-negative".into(),
        ));
    }
    for a in 0..3 {
        for b in 0..3 {
            if !requested[a][b].is_finite() || (requested[a][b] - requested[b][a]).abs() > 1e-12 {
                return Err(Error::InvalidInput(
                    "normal covariance must be finite and symmetric".into(),
                ));
            }
        }
    }
    let m = DMatrix::from_fn(3, 3, |a, b| requested[a][b]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let projected = vals[0] < -1e-12 * scale.max(1.0);
    if projected {
        log::warn!(
            "normal covariance is not positive semi-definite (eigenvalues {:.4}, {:.4}, {:.4}); clipping eigenvalues at {floor}",
            vals[0],
            vals[1],
            vals[2]
        );
    }
    let mut matrix = [[0.0; 3]; 3];
    let mut factor = [[0.0; 3]; 3];
    for (col, &k) in order.iter().enumerate() {
        let lambda = if projected {
            eig.eigenvalues[k].max(floor)
        } else {
            eig.eigenvalues[k].max(0.0)
        };
        let v = eig.eigenvectors.column(k);
        for a in 0..3 {
            factor[a][col] = v[a] * lambda.sqrt();
            for b in 0..3 {
                matrix[a][b] += lambda * v[a] * v[b];
            }
        }
    }
    Ok(ResolvedCovariance {
        requested,
        matrix,
        requested_eigenvalues: [vals[0], vals[1], vals[2]],
        projected,
        factor,
    })
}

/// A fully specified design: covariance resolved and intercepts fixed.
#[derive(Debug, Clone)]
pub struct Dgp {
    pub spec: DgpSpec,
    /// `α_2, …, α_J`.
    pub alpha: Vec<f64>,
    pub covariance: ResolvedCovariance,
}

/// One simulated dataset with its oracle quantities.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub sample: ObservationalSample,
    pub true_scores: PropensityMatrix,
    /// `n × J` potential outcomes `Y_i(j)`.
    pub potential_outcomes: Array2<f64>,
}

impl Dgp {
    pub fn n_groups(&self) -> usize {
        self.spec.n_groups()
    }

    /// `E[X]` in closed form.
    pub fn covariate_means(&self) -> [f64; N_COVARIATES] {
        let m = self.spec.normal_mean;
        let [a, b, c] = NON_NORMAL_MEANS;
        [m[0], m[1], m[2], a, b, c]
    }

    /// Draws one covariate vector.
    pub fn draw_covariates(&self, rng: &mut StreamRng) -> [f64; N_COVARIATES] {
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let l = &self.covariance.factor;
        let m = self.spec.normal_mean;
        let uniform = Uniform::new(-3.0, 3.0).expect("valid range");
        let chi: f64 = StandardNormal.sample(rng);
        [
            m[0] + l[0][0] * z[0] + l[0][1] * z[1] + l[0][2] * z[2],
            m[1] + l[1][0] * z[0] + l[1][1] * z[1] + l[1][2] * z[2],
            m[2] + l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2],
            uniform.sample(rng),
            chi * chi,
            f64::from(u8::from(rng.random::<bool>())),
        ]
    }

    /// True generalized propensity scores at `x`.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        scores_with(&self.spec, &self.alpha, x)
    }

    /// `m_j(x) = (1, x)ᵀ γ_j`.
    pub fn outcome_mean(&self, group: usize, x: &[f64]) -> f64 {
        let g = &self.spec.gamma[group];
        g[0] + g[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Generates the dataset for stream `index` of `seed`.
    pub fn generate_indexed(&self, seed: u64, index: u64) -> Result<SimDataset> {
        let n = self.spec.n;
        let j = self.n_groups();
        let mut rng = stream(seed, Purpose::Data, index);
        let mut x = Array2::zeros((n, N_COVARIATES));
        let mut e = Array2::zeros((n, j));
        let mut po = Array2::zeros((n, j));
        let mut groups = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let xi = self.draw_covariates(&mut rng);
            let ei = self.scores(&xi);
            let u: f64 = rng.random();
            let mut g = 0;
            let mut cum = ei[0];
            while g + 1 < j && u >= cum {
                g += 1;
                cum += ei[g];
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            let eps = self.spec.noise_sd * noise;
            for k in 0..j {
                po[[i, k]] = self.outcome_mean(k, &xi) + eps;
                e[[i, k]] = ei[k];
            }
            for (c, v) in xi.iter().enumerate() {
                x[[i, c]] = *v;
            }
            groups.push(g);
            y.push(po[[i, g]]);
        }
        let sample = ObservationalSample::new(
            x,
            COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            groups,
            (1..=j).map(|g| g.to_string()).collect(),
            Some(y),
        )?;
        Ok(SimDataset {
            sample,
            true_scores: PropensityMatrix::new(e, ScoreSource::TrueScores)?,
            potential_outcomes: po,
        })
    }

    pub fn generate(&self, seed: u64) -> Result<SimDataset> {
        self.generate_indexed(seed, 0)
    }
}

fn scores_with(spec: &DgpSpec, alpha: &[f64], x: &[f64]) -> Vec<f64> {
    let j = spec.n_groups();
    let mut eta = vec![0.0; j];
    for k in 1..j {
        let slope: f64 = spec.beta[k - 1].iter().zip(x).map(|(b, v)| b * v).sum();
        eta[k] = alpha[k - 1] + spec.kappa[k - 1] * slope;
    }
    softmax_in_place(&mut eta);
    eta
}

/// Builds the design (calibrating intercepts if needed) and draws one dataset.
pub fn generate_dataset(spec: &DgpSpec, seed: u64) -> Result<SimDataset> {
    spec.build()?.generate(seed)
}

/// Intercepts `α_2, …, α_J` such that the average true score over `mc_n`
/// covariate draws equals `target`.
pub fn calibrate_intercepts(spec: &DgpSpec, target: &[f64], mc_n: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let dgp = Dgp {
        spec: spec.clone(),
        alpha: vec![0.0; spec.n_groups() - 1],
        covariance: resolve_covariance(spec.raw_covariance(), spec.eigenvalue_floor)?,
    };
    calibrate_intercepts_for(&dgp, target, mc_n)
}

fn calibrate_intercepts_for(dgp: &Dgp, target: &[f64], mc_n: usize) -> Result<Vec<f64>> {
    let j = dgp.n_groups();
    if target.len() != j
        || target.iter().any(|&t| t <= 0.0)
        || (target.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Calibration(
            "target shares must be positive, one per group, summing to 1".into(),
        ));
    }
    if mc_n == 0 {
        return Err(Error::Calibration(
            "needs at least one covariate draw".into(),
        ));
    }
    let mut rng = stream(dgp.spec.calibration_seed, Purpose::Calibration, 0);
    let draws: Vec<[f64; N_COVARIATES]> =
        (0..mc_n).map(|_| dgp.draw_covariates(&mut rng)).collect();
    let m = j - 1;

    let evaluate = |alpha: &[f64]| -> (Array1<f64>, Array2<f64>) {
        let mut mean = Array1::zeros(m);
        let mut jac = Array2::zeros((m, m));
        for x in &draws {
            let e = scores_with(&dgp.spec, alpha, x);
            for a in 0..m {
                mean[a] += e[a + 1];
                for b in 0..m {
                    let d = f64::from(u8::from(a == b));
                    jac[[a, b]] += e[a + 1] * (d - e[b + 1]);
                }
            }
        }
        let nf = mc_n as f64;
        let resid = mean / nf - Array1::from_iter(target[1..].iter().copied());
        (resid, jac / nf)
    };
    let norm = |v: &Array1<f64>| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let mut alpha: Vec<f64> = (1..j).map(|k| (target[k] / target[0]).ln()).collect();
    let (mut resid, mut jac) = evaluate(&alpha);
    for _ in 0..200 {
        if norm(&resid) < 1e-12 {
            break;
        }
        let step =
            crate::linalg::symmetric_pinv(jac.t().dot(&jac).view()).dot(&jac.t().dot(&resid));
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-8 {
            let cand: Vec<f64> = alpha
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a - t * s)
                .collect();
            let (r, jc) = evaluate(&cand);
            if norm(&r) < norm(&resid) {
                alpha = cand;
                resid = r;
                jac = jc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm(&resid) > 1e-6 {
        return Err(Error::Calibration(format!(
            "average scores miss the targets by {:.3e}",
            norm(&resid)
        )));
    }
    Ok(alpha)
}
