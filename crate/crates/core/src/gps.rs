//! Multinomial-logistic generalized propensity score model.
//!
//! Group 1 (index 0) is the reference with a zero linear predictor. The
//! parameter vector is laid out block by block, `(α_2, β_2, …, α_J, β_J)`,
//! each block holding an intercept followed by the `p` slopes.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationalSample, PropensityMatrix, ScoreSource};
use crate::error::{Error, Result};
use crate::linalg;

/// Fitted scores below this trigger a quasi-separation warning.
pub const SEPARATION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the gradient of the mean
    /// log-likelihood.
    pub grad_tol: f64,
    /// ℓ2 penalty on slopes (intercepts are never penalised).
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-8,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsModel {
    pub theta: Vec<f64>,
    pub n_groups: usize,
    pub covariate_names: Vec<String>,
    /// Always 1: the first group has `α_1 = 0, β_1 = 0`.
    pub reference_group: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `None` for models built from given parameters rather than fitted.
    pub final_gradient_norm: Option<f64>,
    pub log_likelihood: Option<f64>,
    /// Penalised log-likelihood after each accepted iteration.
    #[serde(default)]
    pub trace: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl GpsModel {
    /// A model with the given parameters and no fit metadata.
    pub fn from_theta(
        theta: Vec<f64>,
        n_groups: usize,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let expected = (n_groups - 1) * (covariate_names.len() + 1);
        if theta.len() != expected {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected,
                found: theta.len(),
            });
        }
        Ok(Self {
            theta,
            n_groups,
            covariate_names,
            reference_group: 1,
            converged: false,
            iterations: 0,
            final_gradient_norm: None,
            log_likelihood: None,
            trace: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Length of one parameter block (`p + 1`).
    pub fn block_len(&self) -> usize {
        self.covariate_names.len() + 1
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// Names of the parameters in `theta` order, e.g. `alpha_2`, `x1_2`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_params());
        for j in 2..=self.n_groups {
            out.push(format!("alpha_{j}"));
            out.extend(self.covariate_names.iter().map(|c| format!("{c}_{j}")));
        }
        out
    }

    /// Scores for one covariate row.
    pub fn score_row(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut eta = linear_predictors(&self.theta, self.n_groups, x);
        softmax_in_place(&mut eta);
        eta
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<PropensityMatrix> {
        predict_gps(self, x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// `η_j = α_j + xᵀβ_j` for every group, with `η_1 = 0`.
pub(crate) fn linear_predictors(
    theta: &[f64],
    n_groups: usize,
    x: ArrayView1<'_, f64>,
) -> Vec<f64> {
    let q = x.len() + 1;
    let mut eta = vec![0.0; n_groups];
    for (k, block) in theta.chunks_exact(q).enumerate() {
        eta[k + 1] = block[0]
            + block[1..]
                .iter()
                .zip(x.iter())
                .map(|(b, v)| b * v)
                .sum::<f64>();
    }
    eta
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax over linear predictors with the reference predictor fixed at 0.
pub fn predict_gps(model: &GpsModel, x: ArrayView2<'_, f64>) -> Result<PropensityMatrix> {
    if x.ncols() != model.n_covariates() {
        return Err(Error::Dimension {
            what: "covariate columns",
            expected: model.n_covariates(),
            found: x.ncols(),
        });
    }
    let mut e = Array2::zeros((x.nrows(), model.n_groups));
    for (i, row) in x.outer_iter().enumerate() {
        let p = model.score_row(row);
        e.row_mut(i).assign(&Array1::from(p));
    }
    PropensityMatrix::new(e, ScoreSource::Fitted)
}

/// Multinomial log-likelihood of `theta` on the sample.
pub fn log_likelihood(theta: &[f64], sample: &ObservationalSample) -> f64 {
    let j = sample.n_groups();
    sample
        .covariates()
        .outer_iter()
        .zip(sample.groups())
        .map(|(x, &g)| {
            let eta = linear_predictors(theta, j, x);
            eta[g] - log_sum_exp(&eta)
        })
        .sum()
}

struct Derivatives {
    loglik: f64,
    gradient: Array1<f64>,
    /// Negative Hessian of the log-likelihood (sum over units).
    neg_hessian: Array2<f64>,
}

fn derivatives(theta: &[f64], sample: &ObservationalSample, ridge: f64) -> Derivatives {
    let j = sample.n_groups();
    let q = sample.n_covariates() + 1;
    let d = theta.len();
    let mut gradient = Array1::zeros(d);
    let mut neg_hessian = Array2::zeros((d, d));
    let mut loglik = 0.0;
    let mut xt = vec![0.0; q];
    let mut outer = Array2::zeros((q, q));
    for (x, &g) in sample.covariates().outer_iter().zip(sample.groups()) {
        let eta = linear_predictors(theta, j, x);
        loglik += eta[g] - log_sum_exp(&eta);
        let mut e = eta;
        softmax_in_place(&mut e);
        xt[0] = 1.0;
        xt[1..].iter_mut().zip(x.iter()).for_each(|(a, b)| *a = *b);
        for a in 0..q {
            for b in 0..q {
                outer[[a, b]] = xt[a] * xt[b];
            }
        }
        for k in 1..j {
            let r = f64::from(u8::from(g == k)) - e[k];
            let off = (k - 1) * q;
            for a in 0..q {
                gradient[off + a] += r * xt[a];
            }
            for l in 1..j {
                let w = e[k] * (f64::from(u8::from(k == l)) - e[l]);
                let offl = (l - 1) * q;
                let mut blk = neg_hessian.slice_mut(s![off..off + q, offl..offl + q]);
                blk.scaled_add(w, &outer);
            }
        }
    }
    if ridge > 0.0 {
        for (idx, t) in theta.iter().enumerate() {
            if idx % q != 0 {
                loglik -= 0.5 * ridge * t * t;
                gradient[idx] -= ridge * t;
                neg_hessian[[idx, idx]] += ridge;
            }
        }
    }
    Derivatives {
        loglik,
        gradient,
        neg_hessian,
    }
}

/// Names of design columns (intercept first) that are linearly dependent on
/// the columns before them.
pub fn rank_deficient_columns(sample: &ObservationalSample) -> Vec<String> {
    let n = sample.n();
    let x = sample.covariates();
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut offending = Vec::new();
    let columns = std::iter::once(("(intercept)".to_owned(), Array1::ones(n))).chain(
        sample
            .covariate_names()
            .iter()
            .enumerate()
            .map(|(c, name)| (name.clone(), x.column(c).to_owned())),
    );
    for (name, col) in columns {
        let norm = col.dot(&col).sqrt();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v.scaled_add(-proj, b);
        }
        let resid = v.dot(&v).sqrt();
        if norm == 0.0 || resid <= 1e-9 * norm {
            offending.push(name);
        } else {
            basis.push(v / resid);
        }
    }
    offending
}

/// Newton–Raphson maximum likelihood with step halving.
///
/// A fit that exhausts `max_iter` is returned with `converged = false` and a
/// warning; callers decide whether that is fatal.
pub fn fit_multinomial(sample: &ObservationalSample, opts: &FitOptions) -> Result<GpsModel> {
    let j = sample.n_groups();
    let q = sample.n_covariates() + 1;
    let d = (j - 1) * q;
    let n = sample.n();
    if n <= d {
        return Err(Error::TooFewUnits { n, params: d });
    }
    let offending = rank_deficient_columns(sample);
    if !offending.is_empty() {
        return Err(Error::RankDeficient { columns: offending });
    }

    let nf = n as f64;
    let mut theta = vec![0.0; d];
    let mut der = derivatives(&theta, sample, opts.ridge);
    let mut trace = vec![der.loglik];
    let mut warnings = Vec::new();
    let mut iterations = 0;
    let mut grad_norm = max_abs(der.gradient.view()) / nf;

    while grad_norm > opts.grad_tol && iterations < opts.max_iter {
        iterations += 1;
        let step = match linalg::spd_solve(der.neg_hessian.view(), der.gradient.view()) {
            Some(step) => step,
            None => {
                log::debug!("Hessian solve failed at iteration {iterations}; using pseudo-inverse");
                linalg::symmetric_pinv(der.neg_hessian.view()).dot(&der.gradient)
            }
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a + t * b)
                .collect();
            let cand_der = derivatives(&cand, sample, opts.ridge);
            if cand_der.loglik.is_finite()
                && cand_der.loglik >= der.loglik - 1e-12 * (1.0 + der.loglik.abs())
            {
                accepted = Some((cand, cand_der));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cand_der)) => {
                theta = cand;
                der = cand_der;
                trace.push(der.loglik);
                grad_norm = max_abs(der.gradient.view()) / nf;
            }
            None => {
                warnings.push(format!(
                    "line search stalled at iteration {iterations} (gradient max-norm {grad_norm:.3e})"
                ));
                break;
            }
        }
    }

    let converged = grad_norm <= opts.grad_tol;
    if !converged {
        warnings.push(format!(
            "did not converge within {} iterations (gradient max-norm {grad_norm:.3e})",
            opts.max_iter
        ));
    }
    let mut model = GpsModel {
        log_likelihood: Some(log_likelihood(&theta, sample)),
        theta,
        n_groups: j,
        covariate_names: sample.covariate_names().to_vec(),
        reference_group: 1,
        converged,
        iterations,
        final_gradient_norm: Some(grad_norm),
        trace,
        warnings,
    };
    let min_score = sample
        .covariates()
        .outer_iter()
        .flat_map(|x| model.score_row(x))
        .fold(f64::INFINITY, f64::min);
    if min_score < SEPARATION_THRESHOLD {
        model.warnings.push(format!(
            "quasi-separation: smallest fitted score is {min_score:.3e}"
        ));
    }
    for w in &model.warnings {
        log::warn!("GPS fit: {w}");
    }
    Ok(model)
}

fn max_abs(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Per-unit score contributions `S_θ,i` (rows) at the model's parameters.
pub fn score_vectors(model: &GpsModel, sample: &ObservationalSample) -> Result<Array2<f64>> {
    check_compatible(model, sample)?;
    if !model.converged {
        log::warn!("score vectors requested for a non-converged GPS model");
    }
    let q = model.block_len();
    let mut out = Array2::zeros((sample.n(), model.n_params()));
    for (i, (x, &g)) in sample
        .covariates()
        .outer_iter()
        .zip(sample.groups())
        .enumerate()
    {
        let e = model.score_row(x);
        for k in 1..model.n_groups {
            let r = f64::from(u8::from(g == k)) - e[k];
            let off = (k - 1) * q;
            out[[i, off]] = r;
            for (a, v) in x.iter().enumerate() {
                out[[i, off + 1 + a]] = r * v;
            }
        }
    }
    Ok(out)
}

/// Outer-product information `(1/n) Σ_i S_i S_iᵀ`.
pub fn information_matrix(model: &GpsModel, sample: &ObservationalSample) -> Result<Array2<f64>> {
    let scores = score_vectors(model, sample)?;
    let n = scores.nrows() as f64;
    let mut info = scores.t().dot(&scores) / n;
    symmetrize(&mut info);
    Ok(info)
}

/// Hessian form `−(1/n) ∂²ℓ/∂θ∂θᵀ`, for cross-checking the outer-product form.
pub fn hessian_information(model: &GpsModel, sample: &ObservationalSample) -> Result<Array2<f64>> {
    check_compatible(model, sample)?;
    let der = derivatives(&model.theta, sample, 0.0);
    let mut info = der.neg_hessian / sample.n() as f64;
    symmetrize(&mut info);
    Ok(info)
}

fn symmetrize(m: &mut Array2<f64>) {
    let d = m.nrows();
    for a in 0..d {
        for b in a + 1..d {
            let v = 0.5 * (m[[a, b]] + m[[b, a]]);
            m[[a, b]] = v;
            m[[b, a]] = v;
        }
    }
}

fn check_compatible(model: &GpsModel, sample: &ObservationalSample) -> Result<()> {
    if model.n_covariates() != sample.n_covariates() {
        return Err(Error::Dimension {
            what: "covariate columns",
            expected: model.n_covariates(),
            found: sample.n_covariates(),
        });
    }
    if model.n_groups != sample.n_groups() {
        return Err(Error::Dimension {
            what: "treatment groups",
            expected: model.n_groups,
            found: sample.n_groups(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|c| format!("x{c}")).collect()
    }

    /// Every group gets the same multiset of covariate values, so the MLE has
    /// zero slopes and intercepts matching the group shares.
    fn intercept_only_sample(sizes: &[usize]) -> ObservationalSample {
        let mut groups = Vec::new();
        let mut x = Vec::new();
        for (j, &c) in sizes.iter().enumerate() {
            groups.extend(std::iter::repeat_n(j, c));
            x.extend((0..c).map(|r| (r % 10) as f64 - 4.5));
        }
        let n = groups.len();
        let labels = (1..=sizes.len()).map(|j| j.to_string()).collect();
        ObservationalSample::new(
            Array2::from_shape_vec((n, 1), x).unwrap(),
            names(1),
            groups,
            labels,
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_scores() {
        let m = GpsModel::from_theta(vec![0.0; 6], 3, names(2)).unwrap();
        let e = m.predict(array![[1.0, -2.0], [0.5, 3.0]].view()).unwrap();
        for v in e.scores().iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_arithmetic() {
        // One covariate fixed at 0, so the intercepts are the linear predictors.
        let m = GpsModel::from_theta(vec![2f64.ln(), 0.0, 3f64.ln(), 0.0], 3, names(1)).unwrap();
        let e = m.predict(array![[0.0]].view()).unwrap();
        assert_abs_diff_eq!(e.row(0)[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.row(0)[1], 2.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.row(0)[2], 3.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = GpsModel::from_theta(vec![0.0; 6], 3, names(2)).unwrap();
        assert!(matches!(
            m.predict(array![[1.0]].view()),
            Err(Error::Dimension {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn saturated_intercepts_reproduce_group_shares() {
        let s = intercept_only_sample(&[450, 600, 450]);
        let m = fit_multinomial(&s, &FitOptions::default()).unwrap();
        assert!(m.converged);
        let e = m.predict(s.covariates()).unwrap();
        for row in e.scores().outer_iter() {
            assert_abs_diff_eq!(row[0], 0.3, epsilon = 1e-8);
            assert_abs_diff_eq!(row[1], 0.4, epsilon = 1e-8);
            assert_abs_diff_eq!(row[2], 0.3, epsilon = 1e-8);
        }
    }

    #[test]
    fn information_forms_agree_exactly_when_groups_share_covariates() {
        // With identical within-group covariate distributions the score outer
        // product equals the Hessian at the MLE, not just in expectation.
        let s = intercept_only_sample(&[30, 50, 20]);
        let m = fit_multinomial(&s, &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(m.theta[1], 0.0, epsilon = 1e-9);
        let opg = information_matrix(&m, &s).unwrap();
        let hes = hessian_information(&m, &s).unwrap();
        for (a, b) in opg.iter().zip(hes.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = array![
            [1.0, 2.0, 1.0],
            [2.0, 4.0, 1.0],
            [3.0, 6.0, 1.0],
            [4.0, 8.0, 1.0],
            [0.0, 0.0, 1.0],
            [5.0, 10.0, 1.0]
        ];
        let s = ObservationalSample::new(
            x,
            vec!["a".into(), "twice_a".into(), "one".into()],
            vec![0, 1, 0, 1, 0, 1],
            vec!["c".into(), "t".into()],
            None,
        )
        .unwrap();
        match fit_multinomial(&s, &FitOptions::default()) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, ["twice_a", "one"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_units() {
        let s = ObservationalSample::new(
            array![[1.0], [2.0], [3.0]],
            names(1),
            vec![0, 1, 2],
            vec!["a".into(), "b".into(), "c".into()],
            None,
        )
        .unwrap();
        assert!(matches!(
            fit_multinomial(&s, &FitOptions::default()),
            Err(Error::TooFewUnits { n: 3, params: 4 })
        ));
    }

    #[test]
    fn separated_data_is_flagged() {
        let x = array![[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]];
        let s = ObservationalSample::new(
            x,
            names(1),
            vec![0, 0, 0, 1, 1, 1],
            vec!["a".into(), "b".into()],
            None,
        )
        .unwrap();
        let m = fit_multinomial(
            &s,
            &FitOptions {
                max_iter: 30,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!m.warnings.is_empty());
        let ridge = fit_multinomial(
            &s,
            &FitOptions {
                ridge: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(ridge.converged);
    }

    #[test]
    fn model_json_round_trips_bit_exactly() {
        let m = GpsModel::from_theta(vec![0.1, -1.0 / 3.0, 2.5e-17, 7.0], 3, names(1)).unwrap();
        let back = GpsModel::from_json(&m.to_json().unwrap()).unwrap();
        for (a, b) in m.theta.iter().zip(&back.theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
