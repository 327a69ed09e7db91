//! Moment checks of the simulator against closed-form values.

use driftguard_core::simgen::{generate, NormalStream, ShiftMode, SimConfig};

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

fn lag1(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    num / den
}

#[test]
fn white_noise_variance_matches_alpha0() {
    let cfg = SimConfig {
        phi: 0.0,
        alpha0: 0.1,
        alpha1: 0.0,
        beta: 0.0,
        len: 1_000_000,
        tau: 1_000_000,
        seed: 7,
        ..SimConfig::default()
    };
    let v = variance(generate(&cfg).unwrap().values());
    assert!((v / 0.1 - 1.0).abs() < 0.02, "variance {v}");
}

#[test]
fn garch_unconditional_variance() {
    let cfg = SimConfig {
        phi: 0.0,
        len: 1_000_000,
        tau: 1_000_000,
        seed: 11,
        ..SimConfig::default()
    };
    assert_eq!(cfg.unconditional_variance(), 0.1 / (1.0 - 0.1 - 0.8));
    let v = variance(generate(&cfg).unwrap().values());
    assert!((v - cfg.unconditional_variance()).abs() < 0.05 * cfg.unconditional_variance(), "variance {v}");
}

#[test]
fn lag_one_autocorrelation_tracks_phi() {
    for phi in [0.1, 0.5, 0.9] {
        let cfg = SimConfig {
            phi,
            alpha1: 0.0,
            beta: 0.0,
            len: 100_000,
            tau: 100_000,
            seed: 3,
            ..SimConfig::default()
        };
        let r = lag1(generate(&cfg).unwrap().values());
        assert!((r - phi).abs() < 0.02, "phi {phi}: lag-1 {r}");
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SimConfig { delta: 1.5, ..SimConfig::default() };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = SimConfig { seed: cfg.seed + 100, ..cfg.clone() };
    assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
}

#[test]
fn output_shift_is_a_constant_offset() {
    let base = SimConfig { shift_mode: ShiftMode::Output, ..SimConfig::default() };
    let a = generate(&base).unwrap();
    let b = generate(&SimConfig { delta: 2.0, ..base }).unwrap();
    for t in 400..500 {
        assert!((b.values()[t] - a.values()[t] - 2.0).abs() < 1e-12);
    }
}

#[test]
fn normal_stream_moments() {
    let mut s = NormalStream::new(42);
    let z: Vec<f64> = (0..200_000).map(|_| s.next_normal()).collect();
    let m = z.iter().sum::<f64>() / z.len() as f64;
    assert!(m.abs() < 0.01);
    assert!((variance(&z) - 1.0).abs() < 0.01);
    let tail = z.iter().filter(|v| v.abs() > 2.326).count() as f64 / z.len() as f64;
    assert!((tail - 0.02).abs() < 0.002, "tail mass {tail}");
}
