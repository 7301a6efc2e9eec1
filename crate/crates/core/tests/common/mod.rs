#![allow(dead_code)]

use balancekit::{ObservationalSample, PropensityMatrix, ScoreSource};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain softmax with the first linear predictor fixed at zero.
pub fn softmax_ref(theta: &[f64], x: &[f64], j: usize) -> Vec<f64> {
    let q = x.len() + 1;
    let mut eta = vec![0.0];
    for g in 1..j {
        let b = &theta[(g - 1) * q..g * q];
        eta.push(b[0] + b[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>());
    }
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|v| v / s).collect()
}

pub fn names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("x{k}")).collect()
}

/// Normal covariates, multinomial-logit assignment with coefficients of size
/// `scale`, and a linear outcome with group shifts. Every group is non-empty.
pub fn logit_sample(
    seed: u64,
    n: usize,
    j: usize,
    p: usize,
    scale: f64,
) -> (ObservationalSample, Vec<f64>) {
    let mut r = rng(seed);
    let theta: Vec<f64> = (0..(j - 1) * (p + 1))
        .map(|_| scale * (2.0 * r.random::<f64>() - 1.0))
        .collect();
    loop {
        let x = Array2::from_shape_fn((n, p), |_| r.sample::<f64, _>(StandardNormal));
        let mut groups = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for row in x.outer_iter() {
            let xi = row.to_vec();
            let e = softmax_ref(&theta, &xi, j);
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut g = j - 1;
            for (k, p) in e.iter().enumerate() {
                acc += p;
                if u < acc {
                    g = k;
                    break;
                }
            }
            groups.push(g);
            let noise: f64 = r.sample(StandardNormal);
            y.push(g as f64 + xi.iter().sum::<f64>() + noise);
        }
        let mut seen = vec![false; j];
        for &g in &groups {
            seen[g] = true;
        }
        if seen.iter().all(|&s| s) {
            let labels = (1..=j).map(|g| g.to_string()).collect();
            let s = ObservationalSample::new(x, names(p), groups, labels, Some(y)).unwrap();
            return (s, theta);
        }
    }
}

/// Random scores on the simplex with groups assigned round-robin, so every
/// group is present.
pub fn scored_sample() -> impl Strategy<Value = (ObservationalSample, PropensityMatrix)> {
    (2usize..5, 0usize..30).prop_flat_map(|(j, extra)| {
        let n = j + extra;
        (
            prop::collection::vec(0.01f64..1.0, n * j),
            prop::collection::vec(-5.0f64..5.0, n * 2),
            prop::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(move |(raw, x, y)| {
                let mut e = Array2::from_shape_vec((n, j), raw).unwrap();
                for mut row in e.rows_mut() {
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                let sample = ObservationalSample::new(
                    Array2::from_shape_vec((n, 2), x).unwrap(),
                    names(2),
                    (0..n).map(|i| i % j).collect(),
                    (1..=j).map(|g| format!("g{g}")).collect(),
                    Some(y),
                )
                .unwrap();
                (
                    sample,
                    PropensityMatrix::new(e, ScoreSource::TrueScores).unwrap(),
                )
            })
    })
}
