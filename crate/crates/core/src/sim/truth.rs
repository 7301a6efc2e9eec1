//! Population quantities of a design: true estimands, the asymptotic variance
//! functional `Q(a, h)` and the overlap tilt over the three-group simplex.
//!
//! Monte Carlo integrals are computed in fixed-size chunks, each with its own
//! random stream, and reduced in chunk order, so results do not depend on the
//! number of workers. All schemes passed in one call share the same draws.

use std::path::Path;

use serde::Serialize;

use crate::data::ContrastSpec;
use crate::error::{Error, Result};
use crate::parallel::{map_indices, Execution};
use crate::rng::{stream, Purpose};
use crate::tilt::{inverse_sum, optimal_alpha_from_sums, overlap_tilt, TiltScheme, TrimThreshold};

use super::dgp::{Dgp, N_COVARIATES};

pub const DEFAULT_POPULATION_DRAWS: usize = 1_000_000;
const CHUNK: usize = 1 << 15;

/// A tilt evaluated on population draws.
#[derive(Debug, Clone)]
enum PopulationTilt {
    Scheme(TiltScheme),
    Trim(f64),
}

impl PopulationTilt {
    fn eval(&self, x: &[f64], e: &[f64]) -> f64 {
        match self {
            PopulationTilt::Trim(alpha) => f64::from(u8::from(inverse_sum(e) <= *alpha)),
            PopulationTilt::Scheme(TiltScheme::CustomIndicator(p)) => {
                f64::from(u8::from(p.eval(ndarray::ArrayView1::from(x))))
            }
            PopulationTilt::Scheme(s) => s.row_tilt(e).expect("row-local scheme"),
        }
    }
}

/// Evaluates `f` on every draw of every chunk and returns the per-chunk
/// accumulators in chunk order.
fn chunked<A, F>(
    dgp: &Dgp,
    mc_n: usize,
    seed: u64,
    purpose: Purpose,
    exec: Execution,
    f: F,
) -> Vec<A>
where
    A: Send + Default,
    F: Fn(&mut A, &[f64; N_COVARIATES], &[f64]) + Sync + Send,
{
    let chunks = mc_n.div_ceil(CHUNK);
    map_indices(chunks, exec, |c| {
        let mut rng = stream(seed, purpose, c as u64);
        let len = CHUNK.min(mc_n - c * CHUNK);
        let mut acc = A::default();
        for _ in 0..len {
            let x = dgp.draw_covariates(&mut rng);
            let e = dgp.scores(&x);
            f(&mut acc, &x, &e);
        }
        acc
    })
}

/// Optimal trimming threshold of the population, approximated on `mc_n` draws.
pub fn population_alpha(
    dgp: &Dgp,
    mc_n: usize,
    seed: u64,
    purpose: Purpose,
    exec: Execution,
) -> Result<TrimThreshold> {
    let sums: Vec<f64> = chunked(
        dgp,
        mc_n,
        seed,
        purpose,
        exec,
        |acc: &mut Vec<f64>, _, e| acc.push(inverse_sum(e)),
    )
    .into_iter()
    .flatten()
    .collect();
    optimal_alpha_from_sums(&sums)
}

fn resolve(
    dgp: &Dgp,
    schemes: &[TiltScheme],
    mc_n: usize,
    seed: u64,
    purpose: Purpose,
    exec: Execution,
) -> Result<Vec<PopulationTilt>> {
    if mc_n < 2 {
        return Err(Error::InvalidInput(
            "population integrals need at least two draws".into(),
        ));
    }
    let mut alpha = None;
    schemes
        .iter()
        .map(|s| {
            if let Some(g) = match s {
                TiltScheme::Treated(g)
                | TiltScheme::VarianceWeighted(g)
                | TiltScheme::TreatedRestricted(g) => Some(*g),
                _ => None,
            } {
                if g >= dgp.n_groups() {
                    return Err(Error::InvalidInput(format!(
                        "scheme `{s}` refers to a missing group"
                    )));
                }
            }
            Ok(match s {
                TiltScheme::Trimming { alpha: Some(a) } => PopulationTilt::Trim(*a),
                TiltScheme::Trimming { alpha: None } => {
                    if alpha.is_none() {
                        alpha = Some(population_alpha(dgp, mc_n, seed, purpose, exec)?.alpha);
                    }
                    PopulationTilt::Trim(alpha.expect("set above"))
                }
                TiltScheme::TreatedRestricted(_) => {
                    return Err(Error::UnsupportedScheme {
                        scheme: s.to_string(),
                        what: "population estimands",
                        reason: "eligibility bounds are defined only for a finite sample",
                    })
                }
                other => PopulationTilt::Scheme(other.clone()),
            })
        })
        .collect()
}

/// `τ = Σ_j a_j E[h m_j(X)] / E[h]` with closed form for `h = 1`.
pub fn true_estimand(
    dgp: &Dgp,
    scheme: &TiltScheme,
    contrast: &ContrastSpec,
    mc_n: usize,
    seed: u64,
) -> Result<f64> {
    Ok(true_estimands(
        dgp,
        std::slice::from_ref(scheme),
        std::slice::from_ref(contrast),
        mc_n,
        seed,
        Execution::default(),
    )?[0][0])
}

/// True estimands for every scheme (rows) and contrast (columns) on common draws.
pub fn true_estimands(
    dgp: &Dgp,
    schemes: &[TiltScheme],
    contrasts: &[ContrastSpec],
    mc_n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    let j = dgp.n_groups();
    if let Some(c) = contrasts.iter().find(|c| c.a.len() != j) {
        return Err(Error::Dimension {
            what: "contrast coefficients",
            expected: j,
            found: c.a.len(),
        });
    }
    let closed_form = |c: &ContrastSpec| {
        let mx = dgp.covariate_means();
        let m: Vec<f64> = (0..j).map(|g| dgp.outcome_mean(g, &mx)).collect();
        c.apply(&m)
    };
    let needs_mc = schemes.iter().any(|s| *s != TiltScheme::Combined);
    let mut group_means = vec![vec![f64::NAN; j]; schemes.len()];
    if needs_mc {
        let tilts = resolve(dgp, schemes, mc_n, seed, Purpose::Truth, exec)?;
        let k = tilts.len();
        // per scheme: Σh, then Σ h m_j for each group
        let parts = chunked(
            dgp,
            mc_n,
            seed,
            Purpose::Truth,
            exec,
            |acc: &mut Vec<f64>, x, e| {
                if acc.is_empty() {
                    acc.resize(k * (j + 1), 0.0);
                }
                let m: Vec<f64> = (0..j).map(|g| dgp.outcome_mean(g, x)).collect();
                for (s, t) in tilts.iter().enumerate() {
                    let h = t.eval(x, e);
                    let base = s * (j + 1);
                    acc[base] += h;
                    for g in 0..j {
                        acc[base + 1 + g] += h * m[g];
                    }
                }
            },
        );
        let mut total = vec![0.0; k * (j + 1)];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        for s in 0..k {
            let base = s * (j + 1);
            if total[base] <= 0.0 {
                return Err(Error::ZeroWeightMass {
                    group: "population".into(),
                    scheme: schemes[s].to_string(),
                });
            }
            for g in 0..j {
                group_means[s][g] = total[base + 1 + g] / total[base];
            }
        }
    }
    schemes
        .iter()
        .zip(&group_means)
        .map(|(s, m)| {
            contrasts
                .iter()
                .map(|c| {
                    if *s == TiltScheme::Combined {
                        closed_form(c)
                    } else {
                        c.apply(m)
                    }
                })
                .collect()
        })
        .collect()
}

/// `Q(a, h) = v E[h² Σ_j a_j²/e_j] / E[h]²`.
pub fn q_functional(
    dgp: &Dgp,
    scheme: &TiltScheme,
    contrast: &ContrastSpec,
    mc_n: usize,
    v: f64,
    seed: u64,
) -> Result<f64> {
    Ok(q_functionals(
        dgp,
        std::slice::from_ref(scheme),
        contrast,
        mc_n,
        v,
        seed,
        Execution::default(),
    )?[0])
}

/// [`q_functional`] for several schemes on common draws.
pub fn q_functionals(
    dgp: &Dgp,
    schemes: &[TiltScheme],
    contrast: &ContrastSpec,
    mc_n: usize,
    v: f64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if contrast.a.len() != dgp.n_groups() {
        return Err(Error::Dimension {
            what: "contrast coefficients",
            expected: dgp.n_groups(),
            found: contrast.a.len(),
        });
    }
    let tilts = resolve(dgp, schemes, mc_n, seed, Purpose::Quadrature, exec)?;
    let k = tilts.len();
    let a2: Vec<f64> = contrast.a.iter().map(|a| a * a).collect();
    let parts = chunked(
        dgp,
        mc_n,
        seed,
        Purpose::Quadrature,
        exec,
        |acc: &mut Vec<f64>, x, e| {
            if acc.is_empty() {
                acc.resize(2 * k, 0.0);
            }
            let inv: f64 = a2.iter().zip(e).map(|(a, p)| a / p).sum();
            for (s, t) in tilts.iter().enumerate() {
                let h = t.eval(x, e);
                acc[2 * s] += h;
                acc[2 * s + 1] += h * h * inv;
            }
        },
    );
    let mut total = vec![0.0; 2 * k];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let nf = mc_n as f64;
    Ok((0..k)
        .map(|s| {
            let c = total[2 * s] / nf;
            v * (total[2 * s + 1] / nf) / (c * c)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TernaryPoint {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    /// Overlap tilt `(Σ_k 1/e_k)^{-1}`; zero on the boundary.
    pub h: f64,
}

/// Grid `(i, j, k) / resolution` over the simplex with the overlap tilt.
pub fn ternary_grid(resolution: usize) -> Result<Vec<TernaryPoint>> {
    if resolution == 0 {
        return Err(Error::InvalidInput(
            "ternary resolution must be positive".into(),
        ));
    }
    let r = resolution as f64;
    let mut out = Vec::with_capacity((resolution + 1) * (resolution + 2) / 2);
    for i in 0..=resolution {
        for j in 0..=resolution - i {
            let k = resolution - i - j;
            let e = [i as f64 / r, j as f64 / r, k as f64 / r];
            out.push(TernaryPoint {
                e1: e[0],
                e2: e[1],
                e3: e[2],
                h: overlap_tilt(&e),
            });
        }
    }
    Ok(out)
}

pub fn write_ternary_csv(path: impl AsRef<Path>, grid: &[TernaryPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path)?;
    for p in grid {
        out.serialize(p)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
