//! The proposed detector, its two ablations and the RNN residual chart.
//!
//! | kind          | bootstrap | variance net | chart                 |
//! |---------------|-----------|--------------|-----------------------|
//! | `proposed`    | yes       | yes          | `f̂ ± z·s(x)`          |
//! | `ablated_a`   | yes       | no           | constant-width residual |
//! | `ablated_b`   | no        | no           | constant-width residual |
//! | `rnn_residual`| no        | no           | constant-width residual |

use serde::{Deserialize, Serialize};

pub use crate::audit::Audit;
use crate::chart::{ChartConfig, IntervalPredictor};
use crate::dataset::{make_windows, TimeSeries, WindowedPairs};
use crate::ensemble::{
    compute_residuals, ensemble_predict, fit_bundle, train_ensemble, train_variance_net,
    EnsembleModel, Provenance, Scaler, UncertaintyBundle,
};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, fingerprint};
use crate::nn::{self, LstmModel, RnnModel, Sample, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Proposed,
    AblatedA,
    AblatedB,
    RnnResidual,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Proposed,
        DetectorKind::AblatedA,
        DetectorKind::AblatedB,
        DetectorKind::RnnResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Proposed => "proposed",
            DetectorKind::AblatedA => "ablated_a",
            DetectorKind::AblatedB => "ablated_b",
            DetectorKind::RnnResidual => "rnn_residual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown detector {s:?}")))
    }

    pub fn uses_bootstrap(self) -> bool {
        matches!(self, DetectorKind::Proposed | DetectorKind::AblatedA)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub train: TrainConfig,
    pub chart: ChartConfig,
    pub window_len: usize,
    /// Ensemble size; bootstrap detectors only.
    #[serde(default)]
    pub b: Option<usize>,
    /// Bag size; `None` means one draw per training pair.
    #[serde(default)]
    pub n: Option<usize>,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, train: TrainConfig, window_len: usize, b: usize) -> Self {
        Self {
            kind,
            train,
            chart: ChartConfig::default(),
            window_len,
            b: kind.uses_bootstrap().then_some(b),
            n: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.chart.validate()?;
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be positive".into()));
        }
        if self.kind.uses_bootstrap() {
            match self.b {
                Some(b) if b >= 2 => {}
                other => {
                    return Err(Error::Config(format!(
                        "{} needs b >= 2, got {other:?}",
                        self.kind.name()
                    )))
                }
            }
        } else if self.b.is_some() || self.n.is_some() {
            return Err(Error::Config(format!(
                "{} takes no bootstrap parameters",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// Location and spread of training residuals `l − f̂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
}

impl ResidualStats {
    pub fn from_residuals(r: &[f64]) -> Result<Self> {
        if r.len() < 2 {
            return Err(Error::Input("need at least two residuals".into()));
        }
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Numeric("training residuals have zero spread".into()));
        }
        Ok(Self { mean, sd })
    }
}

/// A single-network point predictor in data units.
#[derive(Clone, Debug, PartialEq)]
pub enum PointModel {
    Lstm(LstmModel),
    Rnn(RnnModel),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FittedDetector {
    Proposed(UncertaintyBundle),
    AblatedA {
        ensemble: EnsembleModel,
        residuals: ResidualStats,
    },
    /// Ablated B and the RNN residual chart.
    Single {
        kind: DetectorKind,
        model: PointModel,
        scaler: Scaler,
        window_len: usize,
        residuals: ResidualStats,
    },
}

/// Chronological split for single-model early stopping: the last tenth of
/// the pairs is held out.
fn holdout(pairs: &WindowedPairs, scaler: &Scaler) -> (Vec<Sample>, Vec<Sample>) {
    let k = (pairs.len() / 10).max(1);
    let cut = pairs.len() - k;
    let scaled = |p: &crate::dataset::Pair| Sample::new(scaler.window(&p.window), scaler.forward(p.label));
    let train = pairs.pairs[..cut].iter().map(scaled).collect();
    let val = pairs.pairs[cut..].iter().map(scaled).collect();
    (train, val)
}

fn residual_stats(pairs: &WindowedPairs, predict: impl Fn(&[f64]) -> Result<f64>) -> Result<ResidualStats> {
    let r = pairs
        .pairs
        .iter()
        .map(|p| predict(&p.window).map(|f| p.label - f))
        .collect::<Result<Vec<_>>>()?;
    ResidualStats::from_residuals(&r)
}

impl FittedDetector {
    /// Phase I for `spec` on `train`. All randomness derives from
    /// `master_seed`.
    pub fn fit(spec: &DetectorSpec, train: &TimeSeries, master_seed: u64) -> Result<Self> {
        spec.validate()?;
        let w = spec.window_len;
        if w >= train.len() {
            return Err(Error::Input(format!(
                "window length {w} must be smaller than the series length {}",
                train.len()
            )));
        }
        match spec.kind {
            DetectorKind::Proposed => Ok(FittedDetector::Proposed(fit_bundle(
                train,
                w,
                spec.b.unwrap_or_default(),
                spec.n,
                &spec.train,
                master_seed,
            )?)),
            DetectorKind::AblatedA => {
                let pairs = make_windows(train, w)?;
                let n = spec.n.unwrap_or(pairs.len());
                let ensemble =
                    train_ensemble(&pairs, spec.b.unwrap_or_default(), n, &spec.train, master_seed)?;
                Self::ablated_a(ensemble, &pairs)
            }
            DetectorKind::AblatedB | DetectorKind::RnnResidual => {
                Self::single(spec.kind, &make_windows(train, w)?, &spec.train, master_seed)
            }
        }
    }

    /// Like [`FittedDetector::fit`], also counting the components invoked.
    pub fn fit_audited(spec: &DetectorSpec, train: &TimeSeries, master_seed: u64) -> (Result<Self>, Audit) {
        Audit::capture(|| Self::fit(spec, train, master_seed))
    }

    /// Constant-width residual chart around an already trained ensemble.
    pub fn ablated_a(ensemble: EnsembleModel, pairs: &WindowedPairs) -> Result<Self> {
        let residuals = residual_stats(pairs, |x| ensemble_predict(&ensemble, x).map(|(f, _)| f))?;
        Ok(FittedDetector::AblatedA { ensemble, residuals })
    }

    /// Adds the variance network to an already trained ensemble; equal to
    /// the `proposed` fit with the same seed.
    pub fn proposed_from_ensemble(
        ensemble: EnsembleModel,
        train: &TimeSeries,
        pairs: &WindowedPairs,
        cfg: &TrainConfig,
        b: usize,
        n: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let residuals = compute_residuals(&ensemble, pairs)?;
        let variance_net = train_variance_net(
            &residuals,
            &TrainConfig {
                rng_seed: derive_seed(master_seed, 0xFA1),
                ..cfg.clone()
            },
        )?;
        Ok(FittedDetector::Proposed(UncertaintyBundle {
            ensemble,
            variance_net,
            provenance: Provenance {
                train_config: cfg.clone(),
                b,
                n,
                master_seed,
                data_fingerprint: fingerprint(train.values()),
                series_len: train.len(),
            },
        }))
    }

    fn single(kind: DetectorKind, pairs: &WindowedPairs, cfg: &TrainConfig, master_seed: u64) -> Result<Self> {
        let labels: Vec<f64> = pairs.pairs.iter().map(|p| p.label).collect();
        let scaler = Scaler::fit(&labels)?;
        let (train, val) = holdout(pairs, &scaler);
        let model = match kind {
            DetectorKind::AblatedB => {
                let cfg = TrainConfig {
                    rng_seed: derive_seed(master_seed, 0xAB),
                    ..cfg.clone()
                };
                PointModel::Lstm(nn::train(&train, &val, &cfg)?.0)
            }
            DetectorKind::RnnResidual => {
                let cfg = TrainConfig {
                    rng_seed: derive_seed(master_seed, 0x22),
                    ..cfg.clone()
                };
                PointModel::Rnn(nn::train_rnn(&train, &val, &cfg)?.0)
            }
            other => {
                return Err(Error::Config(format!("{} is not a single-model detector", other.name())))
            }
        };
        let predict = |x: &[f64]| -> Result<f64> {
            let z = scaler.window(x);
            let y = match &model {
                PointModel::Lstm(m) => m.predict(&z)?,
                PointModel::Rnn(m) => m.predict(&z)?,
            };
            Ok(scaler.inverse(y))
        };
        let residuals = residual_stats(pairs, predict)?;
        Ok(FittedDetector::Single {
            kind,
            model,
            scaler,
            window_len: pairs.window_len,
            residuals,
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            FittedDetector::Proposed(_) => DetectorKind::Proposed,
            FittedDetector::AblatedA { .. } => DetectorKind::AblatedA,
            FittedDetector::Single { kind, .. } => *kind,
        }
    }

    /// Point forecast in data units.
    pub fn point_forecast(&self, window: &[f64]) -> Result<f64> {
        match self {
            FittedDetector::Proposed(b) => ensemble_predict(&b.ensemble, window).map(|(f, _)| f),
            FittedDetector::AblatedA { ensemble, .. } => ensemble_predict(ensemble, window).map(|(f, _)| f),
            FittedDetector::Single {
                model,
                scaler,
                window_len,
                ..
            } => {
                if window.len() != *window_len {
                    return Err(Error::Input(format!(
                        "window has {} values, model expects {window_len}",
                        window.len()
                    )));
                }
                let z = scaler.window(window);
                let y = match model {
                    PointModel::Lstm(m) => m.predict(&z)?,
                    PointModel::Rnn(m) => m.predict(&z)?,
                };
                Ok(scaler.inverse(y))
            }
        }
    }
}

impl IntervalPredictor for FittedDetector {
    fn window_len(&self) -> usize {
        match self {
            FittedDetector::Proposed(b) => b.window_len(),
            FittedDetector::AblatedA { ensemble, .. } => ensemble.window_len,
            FittedDetector::Single { window_len, .. } => *window_len,
        }
    }

    fn interval(&self, window: &[f64]) -> Result<(f64, f64)> {
        match self {
            FittedDetector::Proposed(b) => b.interval(window),
            FittedDetector::AblatedA { residuals, .. } | FittedDetector::Single { residuals, .. } => {
                Ok((self.point_forecast(window)? + residuals.mean, residuals.sd))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation_follows_kind() {
        let cfg = TrainConfig::default();
        for kind in DetectorKind::ALL {
            assert!(DetectorSpec::new(kind, cfg.clone(), 5, 5).validate().is_ok());
        }
        let mut s = DetectorSpec::new(DetectorKind::Proposed, cfg.clone(), 5, 1);
        assert!(s.validate().is_err());
        s.b = None;
        assert!(s.validate().is_err());
        let mut s = DetectorSpec::new(DetectorKind::AblatedB, cfg, 5, 5);
        s.b = Some(3);
        assert!(s.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for kind in DetectorKind::ALL {
            assert_eq!(DetectorKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(DetectorKind::parse("lstm").is_err());
    }

    #[test]
    fn residual_stats_use_sample_sd() {
        let s = ResidualStats::from_residuals(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!(ResidualStats::from_residuals(&[1.0, 1.0]).is_err());
    }
}
