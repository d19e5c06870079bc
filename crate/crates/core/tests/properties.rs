mod common;

use nalgebra::Complex;
use proptest::prelude::*;
use stiffsense::classify::{self, ClassifierOptions, Normalization};
use stiffsense::lpc::{self, LpcOptions, Method};
use stiffsense::msd::{self, FitOptions, MsdCanonicalParams, MsdFit, MsdPhysicalParams, StepInput};
use stiffsense::signal::{self, Condition, Role, TrialKey, TrialMeta, Trajectory};
use stiffsense::stats::{self, PairedEstimates, PairedRow};
use stiffsense::svm::{self, FeatureMatrix, FeatureSet, MinMax, SvmOptions};
use stiffsense::synth::{self, SynthConfig};

fn meta(distance_px: u32, repetition: u32) -> TrialMeta {
    TrialMeta {
        participant_id: "P01".into(),
        distance_px,
        width_px: 8,
        condition: Condition::Calm,
        repetition,
        start_x_px: Some(0.0),
        target_x_px: Some(f64::from(distance_px)),
    }
}

fn band_limited(parts: &[(f64, f64)], n: usize) -> Trajectory {
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / 2000.0;
            parts
                .iter()
                .enumerate()
                .map(|(i, (a, phase))| a * (2.0 * std::f64::consts::PI * (0.5 + i as f64) * t + phase).sin())
                .sum()
        })
        .collect();
    Trajectory::new(samples, 2000.0, Role::Actual).unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn ar2(a1: f64, a2: f64, noise: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; noise.len()];
    for k in 0..noise.len() {
        let p1 = if k >= 1 { x[k - 1] } else { 0.0 };
        let p2 = if k >= 2 { x[k - 2] } else { 0.0 };
        x[k] = a1 * p1 + a2 * p2 + noise[k];
    }
    x
}

fn fake_fit(gof_percent: f64) -> MsdFit {
    MsdFit {
        params: MsdCanonicalParams::new(1.0, 12.0, 0.9).unwrap(),
        gof_percent,
        residual_ss: 0.0,
        converged: true,
        at_bound: false,
        iterations: 1,
        evaluations: 1,
    }
}

proptest! {
    #[test]
    fn smoothing_is_idempotent(parts in prop::collection::vec((0.1f64..10.0, 0.0f64..6.3), 1..4), n in 2000usize..6000) {
        let t = band_limited(&parts, n);
        let once = signal::smooth(&t, 10.0).unwrap();
        let twice = signal::smooth(&once, 10.0).unwrap();
        prop_assert_eq!(once.len(), t.len());
        prop_assert!((rms(twice.samples()) - rms(once.samples())).abs() < 0.01 * rms(once.samples()));
    }

    #[test]
    fn windowing_is_idempotent(n in 8usize..2000, d in prop::sample::select(signal::DISTANCES_PX.to_vec())) {
        let t = Trajectory::new((0..n).map(|k| k as f64).collect(), 2000.0, Role::Actual).unwrap();
        let m = meta(d, 0);
        let once = signal::truncate_window(&t, &m).unwrap().trajectory;
        let twice = signal::truncate_window(&once, &m).unwrap().trajectory;
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn levinson_matches_dense_solve(
        noise in prop::collection::vec(-1.0f64..1.0, 64..256),
        order in 1usize..=8,
        a1 in -0.9f64..0.9,
    ) {
        let x = ar2(a1, -0.2, &noise);
        let acf = common::acf_direct(&x, order);
        let fast = lpc::levinson_durbin(&acf, order).unwrap();
        let dense = common::yule_walker_dense(&acf, order).unwrap();
        let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let err = fast.coefficients.iter().zip(&dense).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err / norm < 1e-10);
        prop_assert!(fast.error_variance >= 0.0);
    }

    #[test]
    fn lpc_model_shape(noise in prop::collection::vec(-1.0f64..1.0, 64..512), a1 in 0.5f64..1.8) {
        let x = ar2(a1, -0.85, &noise);
        let acf = lpc::autocorrelation(&x, 4).unwrap();
        let model = lpc::lpc_poles(lpc::levinson_durbin(&acf, 4).unwrap()).unwrap();
        let poles = model.poles.as_ref().unwrap();
        prop_assert_eq!(model.coefficients.len(), 4);
        prop_assert_eq!(poles.len(), 4);
        for r in poles.iter().filter(|r| r.im.abs() > 1e-9) {
            let partner = poles.iter().map(|s| (s - r.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(partner < 1e-9);
        }
    }

    #[test]
    fn lpc_estimates_are_bounded_and_scale_free(
        noise in prop::collection::vec(-1.0f64..1.0, 64..512),
        a1 in 0.5f64..1.8,
        scale in 1e-3f64..1e3,
    ) {
        let x = ar2(a1, -0.85, &noise);
        let opts = LpcOptions::default();
        if let Ok(e) = lpc::estimate_lpc(&x, &opts) {
            prop_assert!(e.omega > 0.0);
            prop_assert!((0.0..=1.0).contains(&e.zeta));
            let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let s = lpc::estimate_lpc(&scaled, &opts).unwrap();
            prop_assert!((s.omega - e.omega).abs() < 1e-9);
            prop_assert!((s.zeta - e.zeta).abs() < 1e-9);
        }
    }

    #[test]
    fn damping_ignores_conjugation(re in -0.99f64..0.99, im in 1e-6f64..0.99) {
        let r = Complex::new(re, im);
        prop_assert_eq!(lpc::damping_of_root(r), lpc::damping_of_root(r.conj()));
    }

    #[test]
    fn gof_of_identical_signals_is_100(a in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        prop_assume!(a.iter().any(|v| *v != a[0]));
        prop_assert_eq!(msd::gof(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn physical_canonical_round_trip(kp in 0.1f64..3.0, omega in 0.5f64..50.0, zeta in 0.01f64..5.0, j in 0.01f64..10.0) {
        let c = MsdCanonicalParams::new(kp, omega, zeta).unwrap();
        let back = msd::physical_to_canonical(&msd::canonical_to_physical(&c, j).unwrap()).unwrap();
        prop_assert!((back.kp - kp).abs() < 1e-9 * kp);
        prop_assert!((back.omega - omega).abs() < 1e-9 * omega);
        prop_assert!((back.zeta - zeta).abs() < 1e-9 * zeta);
    }

    #[test]
    fn physical_params_map_by_formula(j in 0.01f64..10.0, b in 0.01f64..10.0, k in 0.01f64..100.0, kf in 0.01f64..100.0) {
        let c = msd::physical_to_canonical(&MsdPhysicalParams { j, b, k, kf }).unwrap();
        prop_assert!((c.omega - (k / j).sqrt()).abs() < 1e-12 * c.omega);
        prop_assert!((c.zeta - b / (2.0 * (k * j).sqrt())).abs() < 1e-12 * c.zeta);
        prop_assert!((c.kp - kf / k).abs() < 1e-12 * c.kp);
    }

    #[test]
    fn spearman_survives_monotone_transforms(pairs in prop::collection::vec((-50f64..50.0, -50f64..50.0), 3..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(base) = stats::spearman(&x, &y) {
            let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            let gy: Vec<f64> = y.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let moved = stats::spearman(&fx, &gy).unwrap();
            prop_assert!((base.rho - moved.rho).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base.rho));
            prop_assert!((0.0..=1.0).contains(&base.p));
        }
    }

    #[test]
    fn t_statistic_flips_with_order(pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 2..30)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(ab) = stats::paired_t_test(&a, &b) {
            let ba = stats::paired_t_test(&b, &a).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
        }
    }

    #[test]
    fn retention_never_increases(gofs in prop::collection::vec(-50f64..100.0, 1..200)) {
        let rows = gofs.iter().enumerate().map(|(i, &g)| PairedRow {
            key: TrialKey {
                participant_id: "P01".into(),
                distance_px: 256,
                width_px: 8,
                condition: Condition::Calm,
                repetition: i as u32,
            },
            lpc: lpc::DampingEstimate::lpc(0.1, 0.5),
            msd: fake_fit(g),
        });
        let (pairs, _) = PairedEstimates::new(rows);
        let curve = stats::threshold_sweep(&pairs, &stats::default_thresholds()).unwrap();
        prop_assert_eq!(curve.points.len(), 20);
        for w in curve.points.windows(2) {
            prop_assert!(w[1].retention_percent <= w[0].retention_percent);
        }
    }
}

fn random_matrix(values: &[(f64, f64)], set: FeatureSet) -> FeatureMatrix {
    let rows = values
        .iter()
        .map(|&(a, b)| set.select(a, b))
        .collect();
    let labels = (0..values.len()).map(|i| i % 2 == 0).collect();
    FeatureMatrix::new(rows, labels, Method::Msd, set).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn msd_fit_is_translation_invariant(omega in 8.0f64..20.0, zeta in 0.5f64..1.1, offset in -500.0f64..500.0) {
        let p = MsdCanonicalParams::new(1.0, omega, zeta).unwrap();
        let y = msd::step_response_samples(&p, 0.0, 100.0, 1000, 2000.0).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + offset).collect();
        let opts = FitOptions::default();
        let a = msd::fit_step(&y, 2000.0, StepInput { from: 0.0, to: 100.0 }, &opts).unwrap();
        let b = msd::fit_step(&shifted, 2000.0, StepInput { from: offset, to: 100.0 + offset }, &opts).unwrap();
        prop_assert!((a.params.omega - b.params.omega).abs() < 1e-4 * omega);
        prop_assert!((a.params.zeta - b.params.zeta).abs() < 1e-4 * zeta);
        prop_assert!((a.params.kp - b.params.kp).abs() < 1e-4);
    }

    #[test]
    fn dual_coefficients_stay_in_box(values in prop::collection::vec((0f64..1.0, 0f64..1.0), 10..40), c in 0.1f64..10.0) {
        let m = random_matrix(&values, FeatureSet::OmegaZeta);
        let model = svm::svm_train(&m, &SvmOptions { c, ..SvmOptions::default() }).unwrap();
        prop_assert!(model.alpha.iter().all(|a| (-1e-12..=c + 1e-12).contains(a)));
        let balance: f64 = model.alpha.iter().zip(m.labels()).map(|(a, &y)| if y { *a } else { -*a }).sum();
        prop_assert!(balance.abs() < 1e-9);
    }

    #[test]
    fn accuracy_ignores_positive_feature_scaling(
        values in prop::collection::vec((0f64..5.0, 0f64..2.0), 20..40),
        factor in 0.01f64..100.0,
        seed in any::<u64>(),
    ) {
        let m = random_matrix(&values, FeatureSet::OmegaZeta);
        let mut scaled = m.clone();
        scaled.scale_column(0, factor);
        let opts = ClassifierOptions::default();
        let a = classify::cross_validate(&m, &opts, seed).unwrap();
        let b = classify::cross_validate(&scaled, &opts, seed).unwrap();
        prop_assert!((0.0..=100.0).contains(&a));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bounds_come_from_training_rows_only(values in prop::collection::vec((0f64..5.0, 0f64..2.0), 20..40), seed in any::<u64>()) {
        let m = random_matrix(&values, FeatureSet::OmegaZeta);
        let opts = ClassifierOptions { normalization: Normalization::PerFold, ..ClassifierOptions::default() };
        let mut leaks = 0;
        classify::cross_validate_observed(&m, &opts, seed, &mut |e| {
            let train: Vec<Vec<f64>> = e.train.iter().map(|&i| m.rows()[i].clone()).collect();
            if *e.bounds != MinMax::fit(&train) {
                leaks += 1;
            }
        }).unwrap();
        prop_assert_eq!(leaks, 0);
    }
}

#[test]
fn ground_truth_covers_every_trial() {
    let cfg = SynthConfig {
        n_participants: 2,
        repetitions: 2,
        ..SynthConfig::default()
    };
    let (set, truth) = synth::generate(&cfg).unwrap();
    assert_eq!(set.len(), 2 * 5 * 4 * 2 * 2);
    assert_eq!(truth.len(), set.len());
    for t in set.trials() {
        let p = truth.get(&t.meta.key()).unwrap();
        assert!(p.omega > 0.0 && p.zeta > 0.0 && p.kp > 0.0);
        assert!((t.meta.target_x_px.unwrap() - t.meta.start_x_px.unwrap() - f64::from(t.meta.distance_px)).abs() < 1.0);
    }
    let (again, _) = synth::generate(&cfg).unwrap();
    assert_eq!(set, again);
}
