//! AR(1)-GARCH(1,1) series with an optional mean shift, and the seed
//! schedules of the simulation study.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::TimeSeries;
use crate::error::{Error, Result};
use crate::hashing::splitmix64;

pub const GRID_PHIS: [f64; 3] = [0.1, 0.5, 0.9];
pub const GRID_DELTAS: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0];

/// Where the mean shift enters the process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// `x_t = φ x_{t−1} + ε_t + δ`: the shift drives the AR recursion, so
    /// the one-step-ahead residual moves by `δ` at every post-change point
    /// and the level settles at `δ / (1 − φ)`.
    #[default]
    Innovation,
    /// `x_t = y_t + δ` with `y` the unshifted process.
    Output,
}

/// One simulated series. Times are 1-based: `x_1 … x_T`, shifted from
/// `x_τ` onward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub phi: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
    #[serde(rename = "T")]
    pub len: usize,
    pub tau: usize,
    pub delta: f64,
    pub seed: u64,
    #[serde(default)]
    pub shift_mode: ShiftMode,
    /// Discarded pre-samples.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    200
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            phi: 0.1,
            alpha0: 0.1,
            alpha1: 0.1,
            beta: 0.8,
            len: 500,
            tau: 401,
            delta: 0.0,
            seed: 20000,
            shift_mode: ShiftMode::Innovation,
            burn_in: default_burn_in(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if !(self.phi.abs() < 1.0) {
            return bad("phi", format!("|phi| must be < 1, got {}", self.phi));
        }
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return bad("alpha0", format!("must be positive, got {}", self.alpha0));
        }
        if !(self.alpha1 >= 0.0) || !(self.beta >= 0.0) {
            return bad("alpha1/beta", "GARCH coefficients must be non-negative".into());
        }
        if !(self.alpha1 + self.beta < 1.0) {
            return bad(
                "alpha1/beta",
                format!("alpha1 + beta must be < 1, got {}", self.alpha1 + self.beta),
            );
        }
        if self.len == 0 {
            return bad("T", "must be positive".into());
        }
        if self.tau == 0 || self.tau > self.len {
            return bad("tau", format!("must lie in 1..={}, got {}", self.len, self.tau));
        }
        if !self.delta.is_finite() {
            return bad("delta", "must be finite".into());
        }
        Ok(())
    }

    /// `α₀ / (1 − α₁ − β)`.
    pub fn unconditional_variance(&self) -> f64 {
        self.alpha0 / (1.0 - self.alpha1 - self.beta)
    }
}

/// Standard normal variates by inverse CDF of a counter-based uniform
/// stream; the `i`-th draw depends only on `(seed, i)`.
#[derive(Clone, Debug)]
pub struct NormalStream {
    key: u64,
    counter: u64,
    normal: Normal,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: splitmix64(seed ^ 0x5DEE_CE66_D1CE_5EED),
            counter: 0,
            normal: Normal::standard(),
        }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        let bits = splitmix64(self.key.wrapping_add(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        self.counter += 1;
        ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }
}

/// Simulates `x_1 … x_T` after `burn_in` discarded steps, starting from
/// `x₀ = 0`, `ε₀ = 0` and `σ²` at its unconditional value.
pub fn generate(cfg: &SimConfig) -> Result<TimeSeries> {
    cfg.validate()?;
    let mut z = NormalStream::new(cfg.seed);
    let mut var = cfg.unconditional_variance();
    let mut eps = 0.0;
    let mut y = 0.0;
    let mut out = Vec::with_capacity(cfg.len);
    for step in 0..cfg.burn_in + cfg.len {
        var = if step == 0 {
            var
        } else {
            cfg.alpha0 + cfg.alpha1 * eps * eps + cfg.beta * var
        };
        eps = var.sqrt() * z.next_normal();
        // 1-based reported time; burn-in steps are ≤ 0
        let t = step as i64 - cfg.burn_in as i64 + 1;
        let shifted = t >= cfg.tau as i64;
        let drive = if shifted && cfg.shift_mode == ShiftMode::Innovation {
            cfg.delta
        } else {
            0.0
        };
        y = cfg.phi * y + eps + drive;
        if t >= 1 {
            let offset = if shifted && cfg.shift_mode == ShiftMode::Output {
                cfg.delta
            } else {
                0.0
            };
            out.push(y + offset);
        }
    }
    Ok(TimeSeries::new(out)?.labeled(format!(
        "phi{}_delta{}_seed{}",
        cfg.phi, cfg.delta, cfg.seed
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// 20000, 20100, …, 119900.
    Main,
    /// 200, 203, …, 3197.
    Appendix,
}

pub fn seed_schedule(kind: ScheduleKind) -> Vec<u64> {
    match kind {
        ScheduleKind::Main => (0..1000).map(|k| 20_000 + 100 * k).collect(),
        ScheduleKind::Appendix => (0..1000).map(|k| 200 + 3 * k).collect(),
    }
}

/// `φ × δ × seed` grid over [`GRID_PHIS`] and [`GRID_DELTAS`], φ-major.
pub fn experiment_grid(seeds: &[u64]) -> Vec<SimConfig> {
    grid(&GRID_PHIS, &GRID_DELTAS, seeds, &SimConfig::default())
}

/// Cartesian product with the remaining fields taken from `base`.
pub fn grid(phis: &[f64], deltas: &[f64], seeds: &[u64], base: &SimConfig) -> Vec<SimConfig> {
    let mut out = Vec::with_capacity(phis.len() * deltas.len() * seeds.len());
    for &phi in phis {
        for &delta in deltas {
            for &seed in seeds {
                out.push(SimConfig {
                    phi,
                    delta,
                    seed,
                    ..base.clone()
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SimConfig::default();
        for cfg in [
            SimConfig { alpha1: 0.3, beta: 0.7, ..base.clone() },
            SimConfig { alpha0: 0.0, ..base.clone() },
            SimConfig { phi: 1.0, ..base.clone() },
            SimConfig { tau: 0, ..base.clone() },
            SimConfig { tau: 501, ..base.clone() },
            SimConfig { beta: -0.1, ..base.clone() },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn schedules() {
        let main = seed_schedule(ScheduleKind::Main);
        assert_eq!((main.len(), main[0], main[999]), (1000, 20000, 119_900));
        let app = seed_schedule(ScheduleKind::Appendix);
        assert_eq!((app.len(), app[0], app[1], app[999]), (1000, 200, 203, 3197));
        let mut all = main.clone();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1000);
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(experiment_grid(&seed_schedule(ScheduleKind::Main)).len(), 21_000);
        let desk = experiment_grid(&seed_schedule(ScheduleKind::Main)[..100]);
        assert_eq!(desk.len(), 2100);
        assert!(desk.iter().all(|c| c.len == 500 && c.tau == 401));
    }

    #[test]
    fn shift_leaves_prefix_untouched() {
        for mode in [ShiftMode::Innovation, ShiftMode::Output] {
            let a = generate(&SimConfig { shift_mode: mode, ..Default::default() }).unwrap();
            let b = generate(&SimConfig { delta: 1.0, shift_mode: mode, ..Default::default() }).unwrap();
            assert_eq!(a.values()[..400], b.values()[..400]);
            assert!((b.values()[400] - a.values()[400] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn innovation_shift_accumulates() {
        let cfg = SimConfig { phi: 0.5, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&SimConfig { delta: 1.0, ..cfg }).unwrap();
        // difference follows d_t = φ d_{t−1} + 1
        let d1 = b.values()[401] - a.values()[401];
        assert!((d1 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn uniforms_stay_open() {
        let mut s = NormalStream::new(0);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
