//! Fixtures shared by the criterion benchmarks.

use driftguard_core::dataset::make_windows;
use driftguard_core::ensemble::{fit_bundle, UncertaintyBundle};
use driftguard_core::nn::Sample;
use driftguard_core::simgen::{generate, SimConfig};
use driftguard_core::{TimeSeries, TrainConfig};

/// Default simulated series for `seed`.
pub fn series(seed: u64) -> TimeSeries {
    generate(&SimConfig { seed, ..SimConfig::default() }).expect("default config is valid")
}

/// The first `batch` windowed training samples of [`series`].
pub fn samples(seed: u64, w: usize, batch: usize) -> Vec<Sample> {
    let pairs = make_windows(&series(seed), w).expect("series is longer than the window");
    pairs.samples().into_iter().take(batch).collect()
}

/// A small bundle trained on the 350-point prefix, for Phase II timings.
pub fn bundle(hidden_dim: usize, b: usize) -> UncertaintyBundle {
    let s = series(20000);
    let (train, _) = driftguard_core::dataset::split_train_test(&s, 350).expect("prefix fits");
    let cfg = TrainConfig {
        hidden_dim,
        max_epochs: 5,
        patience: 5,
        ..TrainConfig::default()
    };
    fit_bundle(&train, 5, b, None, &cfg, 1).expect("training succeeds")
}
