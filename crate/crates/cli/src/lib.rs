//! The `driftguard` command line.
//!
//! Settings come from built-in defaults, overlaid by the JSON document
//! passed with `--config`, overlaid by individual flags. Each command
//! writes a manifest that `driftguard replay` turns back into the same
//! outputs.

pub mod manifest;
pub mod settings;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use driftguard_core::chart::{alarms_csv, monitor, ChartConfig};
use driftguard_core::dataset::{at_summary, load_csv, resample_energy, split_train_test, write_csv, EnergyResampleConfig};
use driftguard_core::ensemble::{fit_bundle, UncertaintyBundle};
use driftguard_core::experiment::{run_experiment, Calibration, ExperimentConfig};
use driftguard_core::metrics::{report_csv, MetricsReport, RunOutcome};
use driftguard_core::simgen::generate;
use driftguard_core::{Error, TimeSeries};
use serde::{Deserialize, Serialize};

use manifest::{FileHash, RunManifest};
use settings::{
    manifest_path_for, read_config, EvaluateSettings, MonitorSettings, Overrides, SimulateSettings,
    Table, TrainSettings,
};

/// Errors raised by the CLI itself, each tied to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{failed} runs failed; partial results were written")]
    Partial { failed: usize },
}

/// 2 config, 3 data, 4 numeric, 5 partial grid failure, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Config(_) => 2,
                Failure::Data(_) => 3,
                Failure::Partial { .. } => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Json(_) => 2,
                Error::Input(_) | Error::Parse { .. } | Error::Io { .. } => 3,
                Error::Domain(_) | Error::Numeric(_) => 4,
            };
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "driftguard", version, about = "Change detection for heteroscedastic time series")]
pub struct Cli {
    /// JSON settings document; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (simulate: a single seed; train: model seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for reproduce; defaults to every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file, or directory for simulate and reproduce.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Control-limit multiplier; for reproduce it replaces calibration.
    #[arg(long, global = true)]
    pub z: Option<f64>,
    /// Seeds per grid cell.
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate AR(1)-GARCH(1,1) series, one CSV per grid cell.
    Simulate,
    /// Turn raw measurements into a monitored series.
    Preprocess {
        #[command(subcommand)]
        kind: Preprocess,
    },
    /// Phase I: fit the ensemble and variance network to a series.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Phase II: classify every point of a series against a trained bundle.
    /// Writes JSON when `--out` ends in `.json`, CSV otherwise.
    Monitor {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Aggregate alarm files into one metrics row.
    Evaluate {
        #[arg(required = true)]
        alarms: Vec<PathBuf>,
    },
    /// Run a study grid and write its report.
    Reproduce {
        #[arg(value_enum)]
        table: Table,
    },
    /// Re-run the job recorded in a manifest.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum Preprocess {
    /// One summary per line of comma-separated spectrum amplitudes.
    AtSummary {
        #[arg(long)]
        input: PathBuf,
    },
    /// Bucket-average minute readings and keep in-service buckets.
    EnergyResample {
        #[arg(long)]
        input: PathBuf,
    },
}

/// A fully resolved command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    Simulate { settings: SimulateSettings, out: PathBuf },
    AtSummary { input: PathBuf, out: PathBuf },
    EnergyResample { settings: EnergyResampleConfig, input: PathBuf, out: PathBuf },
    Train { settings: TrainSettings, data: PathBuf, out: PathBuf },
    Monitor { settings: MonitorSettings, bundle: PathBuf, data: PathBuf, out: PathBuf },
    Evaluate { settings: EvaluateSettings, alarms: Vec<PathBuf>, out: PathBuf },
    Reproduce { table: Table, experiment: ExperimentConfig, out: PathBuf },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Simulate { .. } => "simulate",
            Job::AtSummary { .. } => "preprocess at-summary",
            Job::EnergyResample { .. } => "preprocess energy-resample",
            Job::Train { .. } => "train",
            Job::Monitor { .. } => "monitor",
            Job::Evaluate { .. } => "evaluate",
            Job::Reproduce { .. } => "reproduce",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Job::Simulate { out, .. }
            | Job::AtSummary { out, .. }
            | Job::EnergyResample { out, .. }
            | Job::Train { out, .. }
            | Job::Monitor { out, .. }
            | Job::Evaluate { out, .. }
            | Job::Reproduce { out, .. } => out,
        }
    }

    fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            Job::Simulate { out, .. }
            | Job::AtSummary { out, .. }
            | Job::EnergyResample { out, .. }
            | Job::Train { out, .. }
            | Job::Monitor { out, .. }
            | Job::Evaluate { out, .. }
            | Job::Reproduce { out, .. } => out,
        }
    }

    fn writes_dir(&self) -> bool {
        matches!(self, Job::Simulate { .. } | Job::Reproduce { .. })
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Job::AtSummary { input, .. } | Job::EnergyResample { input, .. } => vec![input],
            Job::Train { data, .. } => vec![data],
            Job::Monitor { bundle, data, .. } => vec![bundle, data],
            Job::Evaluate { alarms, .. } => alarms.iter().map(PathBuf::as_path).collect(),
            Job::Simulate { .. } | Job::Reproduce { .. } => Vec::new(),
        }
    }

    fn seeds(&self) -> Vec<u64> {
        match self {
            Job::Simulate { settings, .. } if settings.seeds.is_empty() => vec![settings.base.seed],
            Job::Simulate { settings, .. } => settings.seeds.clone(),
            Job::Train { settings, .. } => vec![settings.seed],
            Job::Reproduce { experiment, .. } => {
                let mut seeds = experiment.seeds.clone();
                if let Calibration::Quantile { seeds: cal, .. } = &experiment.calibration {
                    seeds.extend(cal);
                }
                seeds
            }
            _ => Vec::new(),
        }
    }
}

/// Combines the parsed flags and config document into a [`Job`].
pub fn resolve(cli: &Cli) -> anyhow::Result<Job> {
    let config = read_config(cli.config.as_deref())?;
    let flags = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        z: cli.z,
        scale: cli.scale,
    };
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    Ok(match &cli.command {
        Command::Simulate => Job::Simulate {
            settings: flags.simulate(&config)?,
            out: out("simulated"),
        },
        Command::Preprocess { kind: Preprocess::AtSummary { input } } => {
            flags.only(&[], "preprocess at-summary")?;
            Job::AtSummary {
                input: input.clone(),
                out: out("at_summary.csv"),
            }
        }
        Command::Preprocess { kind: Preprocess::EnergyResample { input } } => Job::EnergyResample {
            settings: flags.energy(&config)?,
            input: input.clone(),
            out: out("resampled.csv"),
        },
        Command::Train { data } => Job::Train {
            settings: flags.train(&config)?,
            data: data.clone(),
            out: out("bundle.json"),
        },
        Command::Monitor { bundle, data } => Job::Monitor {
            settings: flags.monitor(&config)?,
            bundle: bundle.clone(),
            data: data.clone(),
            out: out("alarms.csv"),
        },
        Command::Evaluate { alarms } => Job::Evaluate {
            settings: flags.evaluate(&config)?,
            alarms: alarms.clone(),
            out: out("report.csv"),
        },
        Command::Reproduce { table } => Job::Reproduce {
            table: *table,
            experiment: flags.reproduce(*table, &config)?,
            out: cli.out.clone().unwrap_or_else(|| {
                PathBuf::from(format!("reproduce_{}", serde_json::to_value(table).unwrap().as_str().unwrap()))
            }),
        },
        Command::Replay { manifest } => {
            flags.only(&[], "replay")?;
            let mut job = RunManifest::load(manifest)?.job;
            if let Some(o) = &cli.out {
                *job.out_mut() = o.clone();
            }
            job
        }
    })
}

pub fn run(cli: &Cli) -> anyhow::Result<RunManifest> {
    let job = resolve(cli)?;
    execute(&job)
}

/// Runs `job`, writes its outputs and manifest, and returns the manifest.
/// A grid with failed runs still writes everything before reporting
/// [`Failure::Partial`].
pub fn execute(job: &Job) -> anyhow::Result<RunManifest> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let inputs = job
        .inputs()
        .into_iter()
        .map(FileHash::of)
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e| Failure::Data(e.to_string()))?;
    if job.writes_dir() {
        std::fs::create_dir_all(job.out())
            .with_context(|| format!("creating {}", job.out().display()))?;
    } else if let Some(parent) = job.out().parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let (outputs, details, failed) = perform(job)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: job.name().to_string(),
        job: job.clone(),
        seeds: job.seeds(),
        inputs,
        outputs: outputs
            .iter()
            .map(|p| FileHash::of(p))
            .collect::<anyhow::Result<_>>()?,
        started_at,
        elapsed_ms: clock.elapsed().as_millis(),
        details,
    };
    let path = manifest_path_for(job.out(), job.writes_dir());
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    log::info!("{} finished in {} ms", job.name(), manifest.elapsed_ms);
    if failed > 0 {
        return Err(Failure::Partial { failed }.into());
    }
    Ok(manifest)
}

type Performed = (Vec<PathBuf>, Option<serde_json::Value>, usize);

fn perform(job: &Job) -> anyhow::Result<Performed> {
    match job {
        Job::Simulate { settings, out } => {
            let mut files = Vec::new();
            for cfg in settings.configs() {
                let series = generate(&cfg)?;
                let path = out.join(format!("phi{}_delta{}_seed{}.csv", cfg.phi, cfg.delta, cfg.seed));
                write_csv(&series, &path)?;
                files.push(path);
            }
            log::info!("wrote {} series", files.len());
            Ok((files, None, 0))
        }
        Job::AtSummary { input, out } => {
            let text = std::fs::read_to_string(input).map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
            let values = parse_spectra(&text, input)?
                .iter()
                .map(|a| at_summary(a))
                .collect::<Result<Vec<_>, _>>()?;
            write_csv(&TimeSeries::new(values)?, out)?;
            Ok((vec![out.clone()], None, 0))
        }
        Job::EnergyResample { settings, input, out } => {
            let series = resample_energy(&load_csv(input)?, settings)?;
            write_csv(&series, out)?;
            Ok((vec![out.clone()], None, 0))
        }
        Job::Train { settings, data, out } => {
            let mut series = load_csv(data)?;
            if let Some(n) = settings.n_train {
                series = split_train_test(&series, n)?.0;
            }
            let bundle = fit_bundle(
                &series,
                settings.window_len,
                settings.b,
                settings.n,
                &settings.train,
                settings.seed,
            )
            .with_context(|| format!("training on {}", data.display()))?;
            bundle.save(out)?;
            Ok((vec![out.clone()], None, 0))
        }
        Job::Monitor { settings, bundle, data, out } => {
            let model = UncertaintyBundle::load(bundle)?;
            let series = load_csv(data)?;
            let chart = ChartConfig {
                z: settings.z,
                window_len: settings.window_len,
            };
            let records = monitor(&model, &series, &chart)
                .with_context(|| format!("monitoring {} with {}", data.display(), bundle.display()))?;
            let text = if out.extension().is_some_and(|e| e == "json") {
                serde_json::to_string_pretty(&records)?
            } else {
                alarms_csv(&records)
            };
            std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
            let alarms = records.iter().filter(|r| !r.in_control).count();
            Ok((vec![out.clone()], Some(serde_json::json!({ "points": records.len(), "alarms": alarms })), 0))
        }
        Job::Evaluate { settings, alarms, out } => {
            let runs = alarms
                .iter()
                .map(|p| read_outcome(p, settings))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let report = MetricsReport::from_runs(&settings.model, settings.phi, settings.delta, &runs)?;
            std::fs::write(out, report_csv(&[report])).with_context(|| format!("writing {}", out.display()))?;
            Ok((vec![out.clone()], None, 0))
        }
        Job::Reproduce { experiment, out, .. } => {
            let result = run_experiment(experiment)?;
            let report = out.join("report.csv");
            std::fs::write(&report, result.report_csv()).with_context(|| format!("writing {}", report.display()))?;
            let failed = result.manifest.failures.len();
            for f in &result.manifest.failures {
                log::warn!("{} phi={} seed={}: {}", f.detector.name(), f.phi, f.seed, f.message);
            }
            let details = serde_json::json!({
                "calibrated_z": result.manifest.z,
                "failures": result.manifest.failures,
                "runs": result.manifest.runs,
            });
            Ok((vec![report], Some(details), failed))
        }
    }
}

/// One spectrum per non-empty line; a non-numeric first line is a header.
fn parse_spectra(text: &str, path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (i, line) in text.trim_start_matches('\u{feff}').lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Failure::Data(format!("{}:{}: {e}", path.display(), i + 1)).into());
            }
        }
    }
    Ok(out)
}

/// Alarm times from a `monitor` CSV.
fn read_outcome(path: &Path, s: &EvaluateSettings) -> anyhow::Result<RunOutcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(driftguard_core::chart::ALARM_HEADER) {
        return Err(Failure::Data(format!("{} is not an alarm file", path.display())).into());
    }
    let mut alarms = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Failure::Data(format!("{}:{}: malformed alarm row", path.display(), i + 2));
        let index: usize = fields.first().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
        match fields.last().copied() {
            Some("false") => alarms.push(index + 1 + s.offset),
            Some("true") => {}
            _ => return Err(bad().into()),
        }
    }
    RunOutcome::new(s.tau, s.len, alarms).map_err(|e| Failure::Data(format!("{}: {e}", path.display())).into())
}
