//! Simulation-study runner: data generation, Phase I per detector, z
//! calibration, Phase II monitoring and metric aggregation.
//!
//! The training prefix ends before the change point, so it is identical
//! for every δ of a `(φ, seed)` pair. Each pair is therefore one job: the
//! detectors are fitted once and every δ is monitored from the same fit.
//! The proposed detector and Ablated A share their bootstrap ensemble.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::chart::{limits, monitor_values, ChartConfig, DEFAULT_Z};
use crate::dataset::{make_windows, split_train_test, TimeSeries};
use crate::detectors::{DetectorKind, FittedDetector};
use crate::ensemble::train_ensemble;
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, sha256_hex};
use crate::metrics::{aggregate, report_csv, MetricsReport, RunOutcome, RunRecord};
use crate::nn::TrainConfig;
use crate::simgen::{generate, SimConfig};

/// How chart widths are set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// One `z` for every detector.
    Fixed { z: f64 },
    /// Per detector and φ: the `1 − target_fap` quantile of the largest
    /// pre-change standardized deviation over δ = 0 runs on `seeds`.
    Quantile { seeds: Vec<u64>, target_fap: f64 },
}

/// Calibration seeds `500000 + 100·k`, disjoint from both study schedules.
pub fn calibration_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| 500_000 + 100 * k).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phis: Vec<f64>,
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub detectors: Vec<DetectorKind>,
    /// Template for generated series; `phi`, `delta` and `seed` are
    /// overwritten per cell.
    pub sim: SimConfig,
    pub n_train: usize,
    pub window_len: usize,
    pub train: TrainConfig,
    pub b: usize,
    #[serde(default)]
    pub n: Option<usize>,
    pub calibration: Calibration,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phis: crate::simgen::GRID_PHIS.to_vec(),
            deltas: crate::simgen::GRID_DELTAS.to_vec(),
            seeds: crate::simgen::seed_schedule(crate::simgen::ScheduleKind::Main),
            detectors: DetectorKind::ALL.to_vec(),
            sim: SimConfig::default(),
            n_train: 350,
            window_len: 5,
            train: TrainConfig::default(),
            b: 5,
            n: None,
            calibration: Calibration::Quantile {
                seeds: calibration_seeds(100),
                target_fap: 0.02,
            },
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phis.is_empty() || self.deltas.is_empty() || self.seeds.is_empty() || self.detectors.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        for &phi in &self.phis {
            for &delta in &self.deltas {
                SimConfig { phi, delta, ..self.sim.clone() }.validate()?;
            }
        }
        if self.n_train <= self.window_len || self.n_train >= self.sim.tau {
            return Err(Error::Config(format!(
                "n_train must exceed the window length and end before tau, got {}",
                self.n_train
            )));
        }
        if self.n_train >= self.sim.len {
            return Err(Error::Config("n_train leaves no test points".into()));
        }
        if self.b < 2 {
            return Err(Error::Config(format!("b must be at least 2, got {}", self.b)));
        }
        self.train.validate()?;
        match &self.calibration {
            Calibration::Fixed { z } => ChartConfig::with_z(*z).validate()?,
            Calibration::Quantile { seeds, target_fap } => {
                if seeds.is_empty() {
                    return Err(Error::Config("calibration needs seeds".into()));
                }
                if !(*target_fap > 0.0 && *target_fap < 1.0) {
                    return Err(Error::Config(format!("target_fap must lie in (0, 1), got {target_fap}")));
                }
                if let Some(s) = seeds.iter().find(|s| self.seeds.contains(s)) {
                    return Err(Error::Config(format!(
                        "calibration seed {s} also appears among evaluation seeds"
                    )));
                }
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        Ok(())
    }
}

/// Chart center and spread at one monitored point.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Point {
    time: usize,
    value: f64,
    center: f64,
    s: f64,
}

/// Monitored points of one `(detector, δ)` cell of a job.
#[derive(Clone, Debug)]
struct Trace {
    kind: DetectorKind,
    delta: f64,
    points: Vec<Point>,
}

#[derive(Clone, Debug)]
struct JobResult {
    phi: f64,
    seed: u64,
    traces: Vec<Trace>,
    failures: Vec<RunFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub detector: DetectorKind,
    pub phi: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedZ {
    pub detector: DetectorKind,
    pub phi: f64,
    pub z: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub z: Vec<CalibratedZ>,
    pub failures: Vec<RunFailure>,
    pub runs: usize,
    pub report_sha256: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub reports: Vec<MetricsReport>,
    pub records: Vec<RunRecord>,
    pub manifest: ExperimentManifest,
}

impl ExperimentOutput {
    pub fn report_csv(&self) -> String {
        report_csv(&self.reports)
    }
}

/// Fits every detector on the shared training prefix of `(φ, seed)`, then
/// monitors the test part of each δ series with the last `w` training values
/// as context.
fn run_job(cfg: &ExperimentConfig, phi: f64, seed: u64, deltas: &[f64]) -> JobResult {
    let mut out = JobResult {
        phi,
        seed,
        traces: Vec::new(),
        failures: Vec::new(),
    };
    let fail = |out: &mut JobResult, kind: DetectorKind, e: &dyn std::fmt::Display| {
        out.failures.push(RunFailure {
            detector: kind,
            phi,
            seed,
            message: e.to_string(),
        })
    };
    let series: Result<Vec<TimeSeries>> = deltas
        .iter()
        .map(|&delta| generate(&SimConfig { phi, delta, seed, ..cfg.sim.clone() }))
        .collect();
    let series = match series {
        Ok(s) => s,
        Err(e) => {
            for &k in &cfg.detectors {
                fail(&mut out, k, &e);
            }
            return out;
        }
    };
    let prep = split_train_test(&series[0], cfg.n_train)
        .and_then(|(train, _)| make_windows(&train, cfg.window_len).map(|p| (train, p)));
    let (train, pairs) = match prep {
        Ok(v) => v,
        Err(e) => {
            for &k in &cfg.detectors {
                fail(&mut out, k, &e);
            }
            return out;
        }
    };
    let master = derive_seed(seed, phi.to_bits());
    let n = cfg.n.unwrap_or(pairs.len());
    let wants = |k| cfg.detectors.contains(&k);
    let ensemble = if wants(DetectorKind::Proposed) || wants(DetectorKind::AblatedA) {
        Some(train_ensemble(&pairs, cfg.b, n, &cfg.train, master))
    } else {
        None
    };
    for &kind in &cfg.detectors {
        let shared = || match ensemble.as_ref() {
            Some(Ok(e)) => Ok(e.clone()),
            Some(Err(e)) => Err(e.to_string()),
            None => Err("ensemble not trained".to_string()),
        };
        let fitted = match kind {
            DetectorKind::Proposed => shared().and_then(|e| {
                FittedDetector::proposed_from_ensemble(e, &train, &pairs, &cfg.train, cfg.b, n, master)
                    .map_err(|e| e.to_string())
            }),
            DetectorKind::AblatedA => {
                shared().and_then(|e| FittedDetector::ablated_a(e, &pairs).map_err(|e| e.to_string()))
            }
            DetectorKind::AblatedB | DetectorKind::RnnResidual => {
                let spec = crate::detectors::DetectorSpec::new(kind, cfg.train.clone(), cfg.window_len, cfg.b);
                FittedDetector::fit(&spec, &train, master).map_err(|e| e.to_string())
            }
        };
        let det = match fitted {
            Ok(d) => d,
            Err(e) => {
                fail(&mut out, kind, &e);
                continue;
            }
        };
        let start = cfg.n_train - cfg.window_len;
        let mut traces = Vec::with_capacity(deltas.len());
        let mut error = None;
        for (s, &delta) in series.iter().zip(deltas) {
            // z only scales the limits; center and spread do not depend on it
            match monitor_values(&det, &s.values()[start..], &ChartConfig::with_z(1.0)) {
                Ok(recs) => traces.push(Trace {
                    kind,
                    delta,
                    points: recs
                        .iter()
                        .map(|r| Point {
                            time: start + r.index + 1,
                            value: r.value,
                            center: r.f_hat,
                            s: r.s,
                        })
                        .collect(),
                }),
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
        }
        match error {
            Some(e) => fail(&mut out, kind, &e),
            None => out.traces.extend(traces),
        }
    }
    out
}

fn outcome(points: &[Point], z: f64, tau: usize, len: usize) -> Result<RunOutcome> {
    let mut alarms = Vec::new();
    for p in points {
        let (lcl, ucl) = limits(p.center, p.s, z)?;
        if !(lcl <= p.value && p.value <= ucl) {
            alarms.push(p.time);
        }
    }
    RunOutcome::new(tau, len, alarms)
}

/// Type-7 (linear interpolation) sample quantile.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Input("quantile needs data and p in [0, 1]".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

fn run_jobs(cfg: &ExperimentConfig, seeds: &[u64], deltas: &[f64]) -> Result<Vec<JobResult>> {
    let jobs: Vec<(f64, u64)> = cfg
        .phis
        .iter()
        .flat_map(|&phi| seeds.iter().map(move |&s| (phi, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(phi, seed)| {
                log::debug!("job phi={phi} seed={seed}");
                run_job(cfg, phi, seed, deltas)
            })
            .collect()
    }))
}

fn calibrate(cfg: &ExperimentConfig, seeds: &[u64], target_fap: f64) -> Result<(Vec<CalibratedZ>, Vec<RunFailure>)> {
    let results = run_jobs(cfg, seeds, &[0.0])?;
    let mut table = Vec::new();
    let mut failures = Vec::new();
    for &phi in &cfg.phis {
        for &kind in &cfg.detectors {
            let maxima: Vec<f64> = results
                .iter()
                .filter(|r| r.phi == phi)
                .flat_map(|r| r.traces.iter().filter(|t| t.kind == kind))
                .map(|t| {
                    t.points
                        .iter()
                        .filter(|p| p.time < cfg.sim.tau)
                        .map(|p| (p.value - p.center).abs() / p.s)
                        .fold(0.0, f64::max)
                })
                .collect();
            if maxima.is_empty() {
                return Err(Error::Numeric(format!(
                    "every calibration run failed for {} at phi {phi}",
                    kind.name()
                )));
            }
            table.push(CalibratedZ {
                detector: kind,
                phi,
                z: quantile(&maxima, 1.0 - target_fap)?,
                runs: maxima.len(),
            });
        }
    }
    for r in results {
        failures.extend(r.failures);
    }
    Ok((table, failures))
}

/// Runs the grid and aggregates one report row per detector × φ × δ, in
/// grid order. Individual failures are recorded, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (z_table, mut failures) = match &cfg.calibration {
        Calibration::Fixed { z } => (
            cfg.phis
                .iter()
                .flat_map(|&phi| {
                    cfg.detectors.iter().map(move |&detector| CalibratedZ {
                        detector,
                        phi,
                        z: *z,
                        runs: 0,
                    })
                })
                .collect(),
            Vec::new(),
        ),
        Calibration::Quantile { seeds, target_fap } => calibrate(cfg, seeds, *target_fap)?,
    };
    let results = run_jobs(cfg, &cfg.seeds, &cfg.deltas)?;
    let z_for = |kind: DetectorKind, phi: f64| {
        z_table
            .iter()
            .find(|c| c.detector == kind && c.phi == phi)
            .map(|c| c.z)
            .unwrap_or(DEFAULT_Z)
    };
    let mut records = Vec::new();
    for &kind in &cfg.detectors {
        for &phi in &cfg.phis {
            for &delta in &cfg.deltas {
                for r in results.iter().filter(|r| r.phi == phi) {
                    if let Some(t) = r.traces.iter().find(|t| t.kind == kind && t.delta == delta) {
                        records.push(RunRecord {
                            model: kind.name().to_string(),
                            phi,
                            delta,
                            seed: r.seed,
                            outcome: outcome(&t.points, z_for(kind, phi), cfg.sim.tau, cfg.sim.len)?,
                        });
                    }
                }
            }
        }
    }
    for r in results {
        failures.extend(r.failures);
    }
    let reports = if records.is_empty() { Vec::new() } else { aggregate(&records)? };
    let csv = report_csv(&reports);
    let manifest = ExperimentManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        z: z_table,
        failures,
        runs: records.len(),
        report_sha256: sha256_hex(csv.as_bytes()),
    };
    Ok(ExperimentOutput {
        reports,
        records,
        manifest,
    })
}
