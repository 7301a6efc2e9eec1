mod common;

use balancekit::data::{load_sample, write_sample, SampleSchema};
use balancekit::estimate::weighted_group_means;
use balancekit::tilt::{optimal_alpha_from_sums, overlap_tilt};
use balancekit::{
    balance_report, compute_tilt, fit_multinomial, sandwich_pairwise, FitOptions,
    ObservationalSample, TiltScheme,
};
use common::{logit_sample, scored_sample};
use proptest::prelude::*;

fn schemes(j: usize) -> Vec<TiltScheme> {
    vec![
        TiltScheme::Combined,
        TiltScheme::Treated(j - 1),
        TiltScheme::TreatedRestricted(0),
        TiltScheme::Matching,
        TiltScheme::VarianceWeighted(0),
        TiltScheme::Overlap,
    ]
}

fn with_outcome(sample: &ObservationalSample, y: Vec<f64>) -> ObservationalSample {
    sample.clone().with_outcome(y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_times_scores_reconstruct_the_tilt((sample, e) in scored_sample()) {
        for scheme in schemes(sample.n_groups()) {
            let ws = compute_tilt(&scheme, &e, &sample).unwrap();
            for i in 0..sample.n() {
                if !ws.kept[i] {
                    continue;
                }
                for g in 0..sample.n_groups() {
                    let back = ws.w[[i, g]] * e.row(i)[g];
                    prop_assert!((back - ws.h[i]).abs() <= 4.0 * f64::EPSILON * ws.h[i]);
                }
            }
        }
    }

    #[test]
    fn overlap_tilt_is_bounded_by_the_smallest_score((_, e) in scored_sample()) {
        let j = e.n_groups() as f64;
        for row in e.scores().rows() {
            let r = row.to_vec();
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            let h = overlap_tilt(&r);
            prop_assert!(h >= min / j * (1.0 - 1e-12) && h <= min * (1.0 + 1e-12));
            // normalised across hypothetical assignments
            let w: Vec<f64> = r.iter().map(|p| h / p).collect();
            let s: f64 = w.iter().sum();
            prop_assert!(w.iter().all(|v| *v / s > 0.0 && *v / s < 1.0));
        }
    }

    #[test]
    fn retrimming_keeps_everything_exactly_when_the_kept_maximum_passes(
        sums in prop::collection::vec(1.0f64..200.0, 2..60),
    ) {
        let t = optimal_alpha_from_sums(&sums).unwrap();
        let mut kept: Vec<f64> = sums.iter().copied().filter(|s| *s <= t.alpha).collect();
        prop_assume!(kept.len() >= 2);
        kept.sort_by(f64::total_cmp);
        let again = optimal_alpha_from_sums(&kept).unwrap();
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        let max = kept[kept.len() - 1];
        // on the kept units P(S <= max) = 1, so the full set passes iff max <= 2 mean
        prop_assert_eq!(again.kept_fraction == 1.0, max <= 2.0 * mean);
        prop_assert!(again.alpha <= t.alpha);
    }

    #[test]
    fn group_means_are_equivariant_and_local(
        (sample, e) in scored_sample(),
        shift in -50.0f64..50.0,
        scale in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0],
    ) {
        let ws = compute_tilt(&TiltScheme::Overlap, &e, &sample).unwrap();
        let y = sample.outcome().unwrap().to_vec();
        let base = weighted_group_means(&sample, &ws).unwrap();
        let shifted = weighted_group_means(&with_outcome(&sample, y.iter().map(|v| v + shift).collect()), &ws).unwrap();
        let scaled = weighted_group_means(&with_outcome(&sample, y.iter().map(|v| v * scale).collect()), &ws).unwrap();
        for g in 0..sample.n_groups() {
            let m = base[g].m_hat;
            prop_assert!((shifted[g].m_hat - (m + shift)).abs() <= 1e-9 * (1.0 + m.abs() + shift.abs()));
            prop_assert!((scaled[g].m_hat - m * scale).abs() <= 1e-9 * (1.0 + (m * scale).abs()));
        }
        // outcomes of other groups do not move group 0
        let moved: Vec<f64> = y.iter().zip(sample.groups()).map(|(v, &g)| if g == 0 { *v } else { v + 100.0 }).collect();
        let other = weighted_group_means(&with_outcome(&sample, moved), &ws).unwrap();
        prop_assert_eq!(other[0].m_hat, base[0].m_hat);
    }

    #[test]
    fn balance_metrics_ignore_affine_covariate_changes(
        (sample, e) in scored_sample(),
        loc in -10.0f64..10.0,
        scale in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
    ) {
        let ws = compute_tilt(&TiltScheme::Overlap, &e, &sample).unwrap();
        let mut x = sample.covariates().to_owned();
        x.column_mut(0).mapv_inplace(|v| loc + scale * v);
        let moved = ObservationalSample::new(
            x,
            sample.covariate_names().to_vec(),
            sample.groups().to_vec(),
            sample.labels().to_vec(),
            None,
        )
        .unwrap();
        let a = balance_report(&sample, &ws).unwrap();
        let b = balance_report(&moved, &ws).unwrap();
        for (ca, cb) in a.covariates.iter().zip(&b.covariates) {
            prop_assert!((ca.max_psd - cb.max_psd).abs() <= 1e-8 * (1.0 + ca.max_psd));
            prop_assert!((ca.max_asd - cb.max_asd).abs() <= 1e-8 * (1.0 + ca.max_asd));
            prop_assert_eq!(ca.max_psd == 0.0, ca.psd.iter().all(|v| *v == 0.0));
            prop_assert_eq!(ca.max_asd == 0.0, ca.asd.iter().all(|p| p.asd == 0.0));
        }
    }
}

#[test]
fn retrimming_can_trim_again() {
    let sums = [
        170.2535407224531,
        178.14620654580938,
        1.0,
        1.0,
        47.30514985642868,
        103.35186404183594,
        33.56651714761287,
    ];
    let t = optimal_alpha_from_sums(&sums).unwrap();
    assert_eq!(t.alpha, 103.35186404183594);
    let kept: Vec<f64> = sums.iter().copied().filter(|s| *s <= t.alpha).collect();
    let again = optimal_alpha_from_sums(&kept).unwrap();
    assert!(again.kept_fraction < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fitted_scores_are_valid_and_sandwich_is_scale_free(seed in any::<u64>(), j in 2usize..5) {
        let (sample, _) = logit_sample(seed, 240, j, 2, 0.6);
        let fit = FitOptions::default();
        let model = fit_multinomial(&sample, &fit).unwrap();
        prop_assert!(model.converged);
        prop_assert!(model.final_gradient_norm.unwrap() <= fit.grad_tol);
        let e = model.predict(sample.covariates()).unwrap();
        for row in e.scores().rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|p| *p > 0.0 && *p < 1.0));
        }
        let ws = compute_tilt(&TiltScheme::Overlap, &e, &sample).unwrap();
        let a = sandwich_pairwise(&sample, &ws, &model).unwrap();
        let b = sandwich_pairwise(&sample, &ws.rescaled(37.5), &model).unwrap();
        for (u, v) in a.iter().zip(&b) {
            let (vu, vv) = (u.variance.unwrap(), v.variance.unwrap());
            prop_assert!(vu >= 0.0);
            prop_assert!((vu - vv).abs() <= 1e-10 * vu.max(1e-300));
            prop_assert!((u.tau_hat - v.tau_hat).abs() <= 1e-12 * (1.0 + u.tau_hat.abs()));
        }
    }

    #[test]
    fn samples_round_trip_through_csv((sample, _) in scored_sample()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sample(&sample, &path, "z", Some("y")).unwrap();
        let mut schema = SampleSchema::new("z").with_outcome("y");
        schema.labels = Some(sample.labels().to_vec());
        let back = load_sample(&path, &schema).unwrap();
        prop_assert_eq!(back.groups(), sample.groups());
        prop_assert_eq!(back.outcome().unwrap(), sample.outcome().unwrap());
        prop_assert_eq!(back.covariates(), sample.covariates());
        prop_assert_eq!(back.group_sizes().iter().sum::<usize>(), back.n());
    }
}
