//! Phase I / Phase II behaviour of the ensemble, the variance network, the
//! chart and the four detectors.

use driftguard_core::chart::{first_alarm, monitor, monitor_values, ChartConfig, IntervalPredictor};
use driftguard_core::dataset::{make_windows, split_train_test, TimeSeries};
use driftguard_core::detectors::{Audit, DetectorKind, DetectorSpec, FittedDetector};
use driftguard_core::ensemble::{
    ensemble_predict, fit_bundle, train_ensemble, train_variance_net, ResidualPair,
    UncertaintyBundle,
};
use driftguard_core::experiment::{run_experiment, Calibration, ExperimentConfig};
use driftguard_core::nn::TrainConfig;
use driftguard_core::simgen::{generate, NormalStream, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden_dim: 6,
        max_epochs: 40,
        patience: 10,
        ..TrainConfig::default()
    }
}

fn white_noise(seed: u64, len: usize) -> TimeSeries {
    let mut z = NormalStream::new(seed);
    TimeSeries::new((0..len).map(|_| z.next_normal()).collect()).unwrap()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let m = (n - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    let var: f64 = ra.iter().map(|x| (x - m).powi(2)).sum();
    cov / var
}

#[test]
fn constant_series_ensemble_predicts_constant() {
    let c = 3.0;
    let s = TimeSeries::new(vec![c; 60]).unwrap();
    let pairs = make_windows(&s, 5).unwrap();
    let cfg = TrainConfig { max_epochs: 200, patience: 200, ..small_cfg() };
    let e = train_ensemble(&pairs, 5, pairs.len(), &cfg, 9).unwrap();
    for y in e.member_outputs(&[c; 5]).unwrap() {
        assert!((y - c).abs() < 0.05 * c.abs().max(1.0), "member output {y}");
    }
}

#[test]
fn ensemble_is_deterministic_and_sized() {
    let s = white_noise(1, 80);
    let pairs = make_windows(&s, 5).unwrap();
    let a = train_ensemble(&pairs, 2, pairs.len(), &small_cfg(), 4).unwrap();
    let b = train_ensemble(&pairs, 2, pairs.len(), &small_cfg(), 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.members.len(), 2);
    let (f, v) = ensemble_predict(&a, &[0.0; 5]).unwrap();
    let outs = a.member_outputs(&[0.0; 5]).unwrap();
    assert_eq!(f, (outs[0] + outs[1]) / 2.0);
    assert_eq!(v, (outs[0] - f).powi(2) + (outs[1] - f).powi(2));
    assert!(ensemble_predict(&a, &[0.0; 4]).is_err());
}

#[test]
fn variance_net_recovers_constant_noise_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = 2.5;
    let d: Vec<ResidualPair> = (0..300)
        .map(|_| ResidualPair {
            window: (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            r2: v,
        })
        .collect();
    let cfg = TrainConfig { max_epochs: 200, patience: 30, ..small_cfg() };
    let net = train_variance_net(&d, &cfg).unwrap();
    for p in d.iter().take(50) {
        let got = net.predict(&p.window).unwrap();
        assert!((got / v - 1.0).abs() < 0.1, "predicted {got}");
    }
    for _ in 0..1000 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1e3..1e3)).collect();
        assert!(net.predict(&x).unwrap() > 0.0);
    }
}

/// `x_t = σ_t z_t` with `log σ_t = sin(2πt/40)`.
fn periodic_noise(seed: u64, len: usize) -> (TimeSeries, Vec<f64>) {
    let mut z = NormalStream::new(seed);
    let var: Vec<f64> = (0..len)
        .map(|t| (2.0 * (2.0 * std::f64::consts::PI * t as f64 / 40.0).sin()).exp())
        .collect();
    let x = var.iter().map(|v| v.sqrt() * z.next_normal()).collect();
    (TimeSeries::new(x).unwrap(), var)
}

#[test]
fn variance_net_tracks_periodic_noise() {
    let (s, var) = periodic_noise(8, 1000);
    let (train, test) = split_train_test(&s, 700).unwrap();
    let cfg = TrainConfig { max_epochs: 100, patience: 20, ..small_cfg() };
    let bundle = fit_bundle(&train, 5, 3, None, &cfg, 1).unwrap();
    let x = test.values();
    let (pred, truth): (Vec<f64>, Vec<f64>) = (5..x.len())
        .map(|i| (bundle.variance_net.predict(&x[i - 5..i]).unwrap(), var[700 + i]))
        .unzip();
    let rho = spearman(&pred, &truth);
    assert!(rho > 0.5, "rank correlation {rho}");
}

#[test]
fn bundle_json_round_trip_and_tamper_check() {
    let s = white_noise(3, 120);
    let bundle = fit_bundle(&s, 4, 2, None, &small_cfg(), 2).unwrap();
    let json = bundle.to_json().unwrap();
    let back = UncertaintyBundle::from_json(&json).unwrap();
    for w in [[0.1, 0.2, -0.3, 1.0], [2.0, -1.0, 0.0, 0.5]] {
        assert_eq!(bundle.interval(&w).unwrap(), back.interval(&w).unwrap());
    }
    assert_eq!(back.to_json().unwrap(), json);
    let tampered = json.replacen("\"b\": 2", "\"b\": 3", 1);
    assert_ne!(tampered, json);
    assert!(UncertaintyBundle::from_json(&tampered).is_err());
    let old = json.replacen("\"format_version\": 1", "\"format_version\": 0", 1);
    assert!(UncertaintyBundle::from_json(&old).is_err());
}

#[test]
fn chart_flags_spike_and_respects_z() {
    let s = white_noise(4, 200);
    let (train, test) = split_train_test(&s, 150).unwrap();
    let bundle = fit_bundle(&train, 5, 2, None, &small_cfg(), 3).unwrap();
    let mut v = test.values().to_vec();
    let k = 20;
    let (center, spread) = bundle.interval(&v[k - 5..k]).unwrap();
    v[k] = center + 50.0 * spread;
    let recs = monitor_values(&bundle, &v, &ChartConfig::default()).unwrap();
    assert_eq!(recs.len(), v.len() - 5);
    let at_k = recs.iter().find(|r| r.index == k).unwrap();
    assert!(!at_k.in_control);
    for r in &recs {
        assert!(r.lcl <= r.ucl);
        assert_eq!(r.in_control, r.lcl <= r.value && r.value <= r.ucl);
    }
    let wide = monitor(&bundle, &test, &ChartConfig::with_z(1e6)).unwrap();
    assert_eq!(first_alarm(&wide), None);
    let alarms = |z: f64| -> Vec<usize> {
        monitor_values(&bundle, &v, &ChartConfig::with_z(z))
            .unwrap()
            .iter()
            .filter(|r| !r.in_control)
            .map(|r| r.index)
            .collect()
    };
    let (loose, tight) = (alarms(1.0), alarms(2.5));
    assert!(tight.iter().all(|i| loose.contains(i)));
    // no reset: monitoring a suffix reproduces the same records
    let tail = monitor_values(&bundle, &v[k - 5..], &ChartConfig::default()).unwrap();
    for r in &tail {
        let full = recs.iter().find(|q| q.index == r.index + k - 5).unwrap();
        assert_eq!((full.f_hat, full.s, full.in_control), (r.f_hat, r.s, r.in_control));
    }
}

#[test]
fn detector_audits_match_component_table() {
    let s = white_noise(6, 120);
    let cfg = small_cfg();
    let fit = |kind| {
        let (r, audit) = FittedDetector::fit_audited(&DetectorSpec::new(kind, cfg.clone(), 5, 3), &s, 11);
        r.unwrap();
        audit
    };
    assert_eq!(
        fit(DetectorKind::Proposed),
        Audit { bootstrap_draws: 3, variance_fits: 1, lstm_fits: 3, rnn_fits: 0 }
    );
    assert_eq!(
        fit(DetectorKind::AblatedA),
        Audit { bootstrap_draws: 3, variance_fits: 0, lstm_fits: 3, rnn_fits: 0 }
    );
    assert_eq!(
        fit(DetectorKind::AblatedB),
        Audit { bootstrap_draws: 0, variance_fits: 0, lstm_fits: 1, rnn_fits: 0 }
    );
    assert_eq!(
        fit(DetectorKind::RnnResidual),
        Audit { bootstrap_draws: 0, variance_fits: 0, lstm_fits: 0, rnn_fits: 1 }
    );
}

#[test]
fn detectors_are_deterministic_and_ablated_a_is_constant_width() {
    let s = white_noise(7, 150);
    let (train, test) = split_train_test(&s, 120).unwrap();
    for kind in DetectorKind::ALL {
        let spec = DetectorSpec::new(kind, small_cfg(), 5, 2);
        let a = FittedDetector::fit(&spec, &train, 5).unwrap();
        let b = FittedDetector::fit(&spec, &train, 5).unwrap();
        assert_eq!(a, b);
        let recs = monitor(&a, &test, &ChartConfig::default()).unwrap();
        if kind != DetectorKind::Proposed {
            assert!(recs.iter().all(|r| r.s == recs[0].s));
        }
    }
}

#[test]
fn shared_ensemble_matches_standalone_fit() {
    let s = white_noise(12, 100);
    let pairs = make_windows(&s, 5).unwrap();
    let cfg = small_cfg();
    let spec = DetectorSpec::new(DetectorKind::Proposed, cfg.clone(), 5, 2);
    let direct = FittedDetector::fit(&spec, &s, 21).unwrap();
    let e = train_ensemble(&pairs, 2, pairs.len(), &cfg, 21).unwrap();
    let shared = FittedDetector::proposed_from_ensemble(e, &s, &pairs, &cfg, 2, pairs.len(), 21).unwrap();
    let w = [0.3, -0.2, 0.1, 0.9, -1.1];
    assert_eq!(direct.interval(&w).unwrap(), shared.interval(&w).unwrap());
}

#[test]
fn huge_shift_is_caught_immediately() {
    let mut quick = 0;
    for k in 0..20u64 {
        let cfg = SimConfig { seed: 20000 + 100 * k, ..SimConfig::default() };
        let sd = (cfg.unconditional_variance() / (1.0 - cfg.phi * cfg.phi)).sqrt();
        let shifted = generate(&SimConfig { delta: 50.0 * sd, ..cfg }).unwrap();
        let (train, _) = split_train_test(&shifted, 350).unwrap();
        let det = FittedDetector::fit(&DetectorSpec::new(DetectorKind::Proposed, small_cfg(), 5, 2), &train, k).unwrap();
        let recs = monitor_values(&det, &shifted.values()[345..], &ChartConfig::default()).unwrap();
        let post = recs.iter().find(|r| !r.in_control && r.index + 345 >= 400);
        if post.is_some_and(|r| r.index + 345 <= 402) {
            quick += 1;
        }
    }
    assert!(quick >= 19, "only {quick} of 20 runs alarmed within 2 steps");
}

#[test]
fn homoscedastic_noise_gives_similar_alarm_counts() {
    let (mut proposed, mut ablated) = (0usize, 0usize);
    for k in 0..20u64 {
        let s = generate(&SimConfig { phi: 0.0, alpha1: 0.0, beta: 0.0, alpha0: 1.0, seed: 900 + k, ..SimConfig::default() }).unwrap();
        let (train, test) = split_train_test(&s, 350).unwrap();
        let pairs = make_windows(&train, 5).unwrap();
        let e = train_ensemble(&pairs, 2, pairs.len(), &small_cfg(), k).unwrap();
        let a = FittedDetector::ablated_a(e.clone(), &pairs).unwrap();
        let p = FittedDetector::proposed_from_ensemble(e, &train, &pairs, &small_cfg(), 2, pairs.len(), k).unwrap();
        let count = |d: &FittedDetector| monitor(d, &test, &ChartConfig::default()).unwrap().iter().filter(|r| !r.in_control).count();
        proposed += count(&p);
        ablated += count(&a);
    }
    let ratio = proposed as f64 / ablated.max(1) as f64;
    assert!((0.5..=2.0).contains(&ratio), "alarm ratio {ratio} ({proposed} vs {ablated})");
}

#[test]
fn tiny_experiment_is_reproducible() {
    let cfg = ExperimentConfig {
        phis: vec![0.5],
        deltas: vec![1.0],
        seeds: vec![20000, 20100],
        detectors: vec![DetectorKind::AblatedB],
        train: small_cfg(),
        calibration: Calibration::Fixed { z: 2.326 },
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.reports.len(), 1);
    assert_eq!(a.reports[0].reps, 2);
    assert_eq!(a.report_csv(), b.report_csv());
    assert_eq!(a.manifest.report_sha256, b.manifest.report_sha256);
    assert!(a.manifest.failures.is_empty());
}
