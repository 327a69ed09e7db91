//! Command settings and their resolution from defaults, a JSON config
//! document and command-line flags, in increasing precedence.

use std::path::{Path, PathBuf};

use driftguard_core::chart::DEFAULT_Z;
use driftguard_core::dataset::EnergyResampleConfig;
use driftguard_core::experiment::{calibration_seeds, Calibration, ExperimentConfig};
use driftguard_core::simgen::{seed_schedule, ScheduleKind, SimConfig, GRID_DELTAS, GRID_PHIS};
use driftguard_core::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Failure;

/// Flags shared by every command. `None` leaves the config value alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub z: Option<f64>,
    pub scale: Option<usize>,
}

/// A simulation grid: every combination of `phis × deltas × seeds` with
/// the remaining fields from `base`. Empty lists fall back to `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    pub base: SimConfig,
    pub phis: Vec<f64>,
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seed schedule used by `--scale`.
    pub schedule: ScheduleKind,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            phis: Vec::new(),
            deltas: Vec::new(),
            seeds: Vec::new(),
            schedule: ScheduleKind::Main,
        }
    }
}

impl SimulateSettings {
    pub fn configs(&self) -> Vec<SimConfig> {
        let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
        let seeds = if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() };
        driftguard_core::simgen::grid(
            &or_base(&self.phis, self.base.phi),
            &or_base(&self.deltas, self.base.delta),
            &seeds,
            &self.base,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub window_len: usize,
    pub b: usize,
    /// Bootstrap sample size; `None` uses the number of training pairs.
    pub n: Option<usize>,
    /// Train on this many leading points only.
    pub n_train: Option<usize>,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            window_len: 5,
            b: 5,
            n: None,
            n_train: None,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSettings {
    pub z: f64,
    /// Window length the data was prepared for; checked against the bundle.
    pub window_len: Option<usize>,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self {
            z: DEFAULT_Z,
            window_len: None,
        }
    }
}

/// Labels and timing for turning alarm files into a metrics row. An alarm
/// at 0-based `index` happened at time `index + 1 + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSettings {
    pub model: String,
    pub phi: f64,
    pub delta: f64,
    pub tau: usize,
    #[serde(rename = "T")]
    pub len: usize,
    pub offset: usize,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            model: "proposed".into(),
            phi: 0.0,
            delta: 0.0,
            tau: 401,
            len: 500,
            offset: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// False alarm probability, δ = 0.
    Table2,
    /// Detection performance over the nonzero shifts.
    Table4,
    /// Both, on the alternative seed schedule.
    Appendix,
}

pub const DEFAULT_SCALE: usize = 100;

impl Table {
    fn schedule(self) -> ScheduleKind {
        match self {
            Table::Appendix => ScheduleKind::Appendix,
            _ => ScheduleKind::Main,
        }
    }

    fn deltas(self) -> Vec<f64> {
        match self {
            Table::Table2 => vec![0.0],
            Table::Table4 => GRID_DELTAS.iter().copied().filter(|&d| d != 0.0).collect(),
            Table::Appendix => GRID_DELTAS.to_vec(),
        }
    }

    /// The study grid at `scale` seeds per cell, calibrated on as many
    /// disjoint seeds.
    pub fn experiment(self, scale: usize) -> ExperimentConfig {
        ExperimentConfig {
            phis: GRID_PHIS.to_vec(),
            deltas: self.deltas(),
            seeds: scaled_seeds(self.schedule(), scale),
            calibration: Calibration::Quantile {
                seeds: calibration_seeds(scale),
                target_fap: 0.02,
            },
            ..ExperimentConfig::default()
        }
    }
}

fn scaled_seeds(kind: ScheduleKind, scale: usize) -> Vec<u64> {
    seed_schedule(kind).into_iter().take(scale).collect()
}

/// Reads a JSON object from `path`, or an empty object.
pub fn read_config(path: Option<&Path>) -> anyhow::Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Failure::Config(format!("config {} must be a JSON object", path.display())).into());
    }
    Ok(value)
}

/// Objects merge key by key; anything else in `over` replaces `base`.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `defaults` overlaid with `config`, decoded with the path of any
/// offending field in the error.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, config: &Value) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(defaults)?;
    merge(&mut value, config);
    serde_path_to_error::deserialize(value)
        .map_err(|e| Failure::Config(format!("config field `{}`: {}", e.path(), e.inner())).into())
}

fn reject(flag: &str, set: bool, command: &str) -> anyhow::Result<()> {
    if set {
        return Err(Failure::Config(format!("--{flag} has no meaning for `{command}`")).into());
    }
    Ok(())
}

impl Overrides {
    /// Fails when any flag outside `allowed` is set.
    pub fn only(&self, allowed: &[&str], command: &str) -> anyhow::Result<()> {
        let set = [
            ("seed", self.seed.is_some()),
            ("jobs", self.jobs.is_some()),
            ("z", self.z.is_some()),
            ("scale", self.scale.is_some()),
        ];
        for (flag, is_set) in set {
            reject(flag, is_set && !allowed.contains(&flag), command)?;
        }
        Ok(())
    }

    pub fn simulate(&self, config: &Value) -> anyhow::Result<SimulateSettings> {
        self.only(&["seed", "scale"], "simulate")?;
        let mut s: SimulateSettings = layered(&SimulateSettings::default(), config)?;
        if let Some(scale) = self.scale {
            s.seeds = scaled_seeds(s.schedule, scale);
        }
        if let Some(seed) = self.seed {
            s.seeds = vec![seed];
        }
        for (i, cfg) in s.configs().iter().enumerate() {
            cfg.validate()
                .map_err(|e| Failure::Config(format!("grid cell {i}: {e}")))?;
        }
        Ok(s)
    }

    pub fn train(&self, config: &Value) -> anyhow::Result<TrainSettings> {
        self.only(&["seed"], "train")?;
        let mut s: TrainSettings = layered(&TrainSettings::default(), config)?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.train
            .validate()
            .map_err(|e| Failure::Config(format!("train: {e}")))?;
        if s.window_len == 0 || s.b < 2 {
            return Err(Failure::Config("window_len must be positive and b at least 2".into()).into());
        }
        Ok(s)
    }

    pub fn monitor(&self, config: &Value) -> anyhow::Result<MonitorSettings> {
        self.only(&["z"], "monitor")?;
        let mut s: MonitorSettings = layered(&MonitorSettings::default(), config)?;
        if let Some(z) = self.z {
            s.z = z;
        }
        Ok(s)
    }

    pub fn evaluate(&self, config: &Value) -> anyhow::Result<EvaluateSettings> {
        self.only(&[], "evaluate")?;
        layered(&EvaluateSettings::default(), config)
    }

    pub fn energy(&self, config: &Value) -> anyhow::Result<EnergyResampleConfig> {
        self.only(&[], "preprocess energy-resample")?;
        layered(&EnergyResampleConfig::default(), config)
    }

    /// Table grid at the flag or default scale, then the config, then
    /// `--scale`, `--jobs` and `--z` again so flags win.
    pub fn reproduce(&self, table: Table, config: &Value) -> anyhow::Result<ExperimentConfig> {
        self.only(&["jobs", "z", "scale"], "reproduce")?;
        let scale = self.scale.unwrap_or(DEFAULT_SCALE);
        if scale == 0 {
            return Err(Failure::Config("--scale must be at least 1".into()).into());
        }
        let mut cfg = layered(&table.experiment(scale), config)?;
        if self.scale.is_some() {
            cfg.seeds = scaled_seeds(table.schedule(), scale);
            if let Calibration::Quantile { seeds, .. } = &mut cfg.calibration {
                *seeds = calibration_seeds(scale);
            }
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if let Some(z) = self.z {
            cfg.calibration = Calibration::Fixed { z };
        }
        Ok(cfg)
    }
}

/// `<path>.manifest.json` next to a single-file output.
pub fn manifest_path_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return out.join("manifest.json");
    }
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn config_then_flags() {
        let config = json!({ "seed": 7, "train": { "hidden_dim": 4 } });
        let s = Overrides::default().train(&config).unwrap();
        assert_eq!((s.seed, s.train.hidden_dim, s.train.max_epochs), (7, 4, 300));
        let flags = Overrides { seed: Some(9), ..Default::default() };
        assert_eq!(flags.train(&config).unwrap().seed, 9);
    }

    #[test]
    fn unknown_fields_name_their_path() {
        let err = Overrides::default()
            .train(&json!({ "train": { "hiden_dim": 4 } }))
            .unwrap_err()
            .to_string();
        assert!(err.contains("train"), "{err}");
    }

    #[test]
    fn nonstationary_grid_is_rejected_up_front() {
        let config = json!({ "base": { "alpha1": 0.5, "beta": 0.6 } });
        let err = Overrides::default().simulate(&config).unwrap_err();
        assert!(err.to_string().contains("alpha1"));
    }

    #[test]
    fn scale_sets_both_seed_lists() {
        let flags = Overrides { scale: Some(3), ..Default::default() };
        let cfg = flags.reproduce(Table::Appendix, &json!({})).unwrap();
        assert_eq!(cfg.seeds, vec![200, 203, 206]);
        assert_eq!(cfg.deltas.len(), 7);
        let Calibration::Quantile { seeds, .. } = cfg.calibration else { panic!() };
        assert_eq!(seeds.len(), 3);
        assert!(Overrides { seed: Some(1), ..Default::default() }
            .reproduce(Table::Table2, &json!({}))
            .is_err());
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(manifest_path_for(Path::new("a/b.json"), false), Path::new("a/b.json.manifest.json"));
        assert_eq!(manifest_path_for(Path::new("out"), true), Path::new("out/manifest.json"));
    }
}
