//! Phase I: bootstrap LSTM ensemble, model-uncertainty estimate, noise
//! residuals and the variance network.
//!
//! Networks are trained on standardized values; every public prediction is
//! in the units of the training series.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::{record, Component};
use crate::dataset::{bootstrap_indices, make_windows, TimeSeries, WindowedPairs};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, fingerprint, sha256_hex};
use crate::nn::{
    self, fit, LstmModel, MlpParams, ModelDocument, Sample, TrainConfig, TrainingHistory,
};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
/// Hidden width of the variance network.
pub const VARIANCE_HIDDEN: usize = 16;

/// Affine standardization `(x − center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub center: f64,
    pub scale: f64,
}

impl Scaler {
    pub const IDENTITY: Scaler = Scaler {
        center: 0.0,
        scale: 1.0,
    };

    /// Mean and population standard deviation; a degenerate spread maps
    /// to scale 1.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("cannot standardize an empty sample".into()));
        }
        let n = values.len() as f64;
        let center = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * center.abs().max(1.0) { sd } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.center + self.scale * y
    }

    pub fn window(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|&x| self.forward(x)).collect()
    }
}

/// `b` LSTM predictors, each fitted to one bootstrap bag.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<LstmModel>,
    pub member_seeds: Vec<u64>,
    pub window_len: usize,
    pub scaler: Scaler,
    pub histories: Vec<TrainingHistory>,
}

/// Mean and sample variance (denominator `b − 1`) of member outputs.
pub fn aggregate_members(outputs: &[f64]) -> Result<(f64, f64)> {
    if outputs.len() < 2 {
        return Err(Error::Input(format!(
            "need at least two member outputs, got {}",
            outputs.len()
        )));
    }
    let b = outputs.len() as f64;
    let mean = outputs.iter().sum::<f64>() / b;
    let var = outputs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Ok((mean, var))
}

fn check_width(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Input(format!(
            "window has {} values, model expects {expected}",
            x.len()
        )));
    }
    Ok(())
}

/// Standardized samples for `indices` (repeats kept).
fn scaled_samples(pairs: &WindowedPairs, indices: &[usize], s: &Scaler) -> Vec<Sample> {
    indices
        .iter()
        .map(|&i| {
            let p = &pairs.pairs[i];
            Sample::new(s.window(&p.window), s.forward(p.label))
        })
        .collect()
}

/// Validation fallback when a bag leaves nothing out of bag: the last tenth
/// of the pairs.
fn suffix_indices(count: usize) -> Vec<usize> {
    let k = (count / 10).max(1);
    (count - k..count).collect()
}

/// Trains member `j` on bag `j` with out-of-bag early stopping. Member seeds
/// are `derive_seed(master_seed, j)`; `n` is the bag size.
pub fn train_ensemble(
    pairs: &WindowedPairs,
    b: usize,
    n: usize,
    cfg: &TrainConfig,
    master_seed: u64,
) -> Result<EnsembleModel> {
    if b < 2 {
        return Err(Error::Config(format!("ensemble size b must be at least 2, got {b}")));
    }
    if pairs.is_empty() {
        return Err(Error::Input("no training pairs".into()));
    }
    cfg.validate()?;
    let labels: Vec<f64> = pairs.pairs.iter().map(|p| p.label).collect();
    let scaler = Scaler::fit(&labels)?;
    let mut members = Vec::with_capacity(b);
    let mut member_seeds = Vec::with_capacity(b);
    let mut histories = Vec::with_capacity(b);
    for j in 0..b {
        let seed = derive_seed(master_seed, j as u64);
        let split = bootstrap_indices(pairs.len(), n, derive_seed(seed, 0xB007))?;
        let val_idx = if split.oob.is_empty() {
            suffix_indices(pairs.len())
        } else {
            split.oob
        };
        let member_cfg = TrainConfig {
            rng_seed: seed,
            ..cfg.clone()
        };
        let (model, history) = nn::train(
            &scaled_samples(pairs, &split.bag, &scaler),
            &scaled_samples(pairs, &val_idx, &scaler),
            &member_cfg,
        )
        .map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("ensemble member {j}: {m}")),
            other => other,
        })?;
        members.push(model);
        member_seeds.push(seed);
        histories.push(history);
    }
    Ok(EnsembleModel {
        members,
        member_seeds,
        window_len: pairs.window_len,
        scaler,
        histories,
    })
}

impl EnsembleModel {
    /// Member outputs in data units.
    pub fn member_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_width(self.window_len, x)?;
        let z = self.scaler.window(x);
        self.members
            .iter()
            .map(|m| m.predict(&z).map(|y| self.scaler.inverse(y)))
            .collect()
    }
}

/// `(f̂, σ̂²_f̂)`: member mean and sample variance at `x`.
pub fn ensemble_predict(e: &EnsembleModel, x: &[f64]) -> Result<(f64, f64)> {
    aggregate_members(&e.member_outputs(x)?)
}

/// Window and squared noise residual after removing model variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPair {
    pub window: Vec<f64>,
    /// `max((l − f̂)² − σ̂²_f̂, 0)`.
    pub r2: f64,
}

pub fn residual_r2(label: f64, f_hat: f64, var_fhat: f64) -> f64 {
    ((label - f_hat).powi(2) - var_fhat).max(0.0)
}

pub fn compute_residuals(e: &EnsembleModel, pairs: &WindowedPairs) -> Result<Vec<ResidualPair>> {
    if pairs.is_empty() {
        return Err(Error::Input("no pairs for residual extraction".into()));
    }
    pairs
        .pairs
        .iter()
        .map(|p| {
            let (f, v) = ensemble_predict(e, &p.window)?;
            Ok(ResidualPair {
                window: p.window.clone(),
                r2: residual_r2(p.label, f, v),
            })
        })
        .collect()
}

/// Noise-variance model: standardized window in, variance out.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceNet {
    pub net: MlpParams,
    pub input_scaler: Scaler,
    /// Targets are divided by this before training; predictions multiplied.
    pub target_scale: f64,
    pub history: Option<TrainingHistory>,
}

impl VarianceNet {
    pub fn window_len(&self) -> usize {
        self.net.input_dim()
    }

    /// Strictly positive variance estimate for `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_width(self.window_len(), x)?;
        Ok(self.target_scale * self.net.variance(&self.input_scaler.window(x))?)
    }
}

/// Minimizes the mean Gaussian NLL of `r²` with early stopping on every
/// fifth residual. The hidden width is [`VARIANCE_HIDDEN`]; the remaining
/// fields of `cfg` apply as given.
pub fn train_variance_net(d: &[ResidualPair], cfg: &TrainConfig) -> Result<VarianceNet> {
    if d.is_empty() {
        return Err(Error::Input("empty residual set".into()));
    }
    cfg.validate()?;
    let w = d[0].window.len();
    if w == 0 || d.iter().any(|p| p.window.len() != w) {
        return Err(Error::Input("residual windows must share a positive width".into()));
    }
    if d.iter().any(|p| !(p.r2 >= 0.0) || !p.r2.is_finite()) {
        return Err(Error::Input("squared residuals must be finite and non-negative".into()));
    }
    record(Component::VarianceFit);
    let flat: Vec<f64> = d.iter().flat_map(|p| p.window.iter().copied()).collect();
    let input_scaler = Scaler::fit(&flat)?;
    let mean_r2 = d.iter().map(|p| p.r2).sum::<f64>() / d.len() as f64;
    let target_scale = if mean_r2 > 0.0 { mean_r2 } else { 1.0 };
    let samples: Vec<Sample> = d
        .iter()
        .map(|p| Sample::new(input_scaler.window(&p.window), p.r2 / target_scale))
        .collect();
    let (train, val): (Vec<Sample>, Vec<Sample>) = if samples.len() >= 5 {
        let mut t = Vec::new();
        let mut v = Vec::new();
        for (i, s) in samples.into_iter().enumerate() {
            if i % 5 == 4 { v.push(s) } else { t.push(s) }
        }
        (t, v)
    } else {
        (samples.clone(), samples)
    };
    let seed = derive_seed(cfg.rng_seed, 0x5A2);
    let init = MlpParams::random(w, VARIANCE_HIDDEN, seed)?;
    let fit_cfg = TrainConfig {
        rng_seed: seed,
        hidden_dim: VARIANCE_HIDDEN,
        ..cfg.clone()
    };
    let (net, history) = fit(init, &train, &val, &fit_cfg).map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("variance network: {m}")),
        other => other,
    })?;
    Ok(VarianceNet {
        net,
        input_scaler,
        target_scale,
        history: Some(history),
    })
}

/// How a bundle was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub train_config: TrainConfig,
    pub b: usize,
    pub n: usize,
    pub master_seed: u64,
    /// SHA-256 of the training series.
    pub data_fingerprint: String,
    pub series_len: usize,
}

/// Everything Phase II needs: ensemble, variance network and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyBundle {
    pub ensemble: EnsembleModel,
    pub variance_net: VarianceNet,
    pub provenance: Provenance,
}

/// `√(σ̂²_ε + σ̂²_f̂)`.
pub fn total_std(var_eps: f64, var_fhat: f64) -> f64 {
    (var_eps + var_fhat).sqrt()
}

/// `(f̂, s)` at `x`.
pub fn predict_total_std(bundle: &UncertaintyBundle, x: &[f64]) -> Result<(f64, f64)> {
    let (f, v) = ensemble_predict(&bundle.ensemble, x)?;
    let s = total_std(bundle.variance_net.predict(x)?, v);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Numeric(format!("total standard deviation {s} is not positive")));
    }
    Ok((f, s))
}

/// Bag size: `n` if given, else the number of pairs.
pub fn fit_bundle(
    train: &TimeSeries,
    window_len: usize,
    b: usize,
    n: Option<usize>,
    cfg: &TrainConfig,
    master_seed: u64,
) -> Result<UncertaintyBundle> {
    if window_len >= train.len() {
        return Err(Error::Input(format!(
            "window length {window_len} must be smaller than the series length {}",
            train.len()
        )));
    }
    let pairs = make_windows(train, window_len)?;
    let n = n.unwrap_or(pairs.len());
    let ensemble = train_ensemble(&pairs, b, n, cfg, master_seed)?;
    let residuals = compute_residuals(&ensemble, &pairs)?;
    let variance_net = train_variance_net(
        &residuals,
        &TrainConfig {
            rng_seed: derive_seed(master_seed, 0xFA1),
            ..cfg.clone()
        },
    )?;
    Ok(UncertaintyBundle {
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
    })
}

#[derive(Clone, Serialize, Deserialize)]
struct BundleDocument {
    format_version: u32,
    window_len: usize,
    scaler: Scaler,
    member_seeds: Vec<u64>,
    members: Vec<ModelDocument>,
    variance_net: ModelDocument,
    variance_input_scaler: Scaler,
    variance_target_scale: f64,
    provenance: Provenance,
    /// SHA-256 of the canonical JSON of every other field.
    content_hash: String,
}

impl UncertaintyBundle {
    pub fn window_len(&self) -> usize {
        self.ensemble.window_len
    }

    fn document(&self) -> BundleDocument {
        BundleDocument {
            format_version: BUNDLE_FORMAT_VERSION,
            window_len: self.ensemble.window_len,
            scaler: self.ensemble.scaler,
            member_seeds: self.ensemble.member_seeds.clone(),
            members: self.ensemble.members.iter().map(LstmModel::to_document).collect(),
            variance_net: self.variance_net.net.to_document(),
            variance_input_scaler: self.variance_net.input_scaler,
            variance_target_scale: self.variance_net.target_scale,
            provenance: self.provenance.clone(),
            content_hash: String::new(),
        }
    }

    fn hash_of(doc: &BundleDocument) -> Result<String> {
        let mut unhashed = doc.clone();
        unhashed.content_hash.clear();
        Ok(sha256_hex(serde_json::to_string(&unhashed)?.as_bytes()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut doc = self.document();
        doc.content_hash = Self::hash_of(&doc)?;
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses and verifies version, hash and dimensional consistency.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BundleDocument = serde_json::from_str(text)?;
        if doc.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported bundle format_version {} (expected {BUNDLE_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let expected = Self::hash_of(&doc)?;
        if doc.content_hash != expected {
            return Err(Error::Config("bundle content hash mismatch".into()));
        }
        if doc.members.len() < 2 || doc.members.len() != doc.member_seeds.len() {
            return Err(Error::Config("bundle needs at least two seeded members".into()));
        }
        let members = doc
            .members
            .iter()
            .map(LstmModel::from_document)
            .collect::<Result<Vec<_>>>()?;
        let net = MlpParams::from_document(&doc.variance_net)?;
        if net.input_dim() != doc.window_len {
            return Err(Error::Config(format!(
                "variance network width {} does not match window length {}",
                net.input_dim(),
                doc.window_len
            )));
        }
        if !(doc.scaler.scale > 0.0) || !(doc.variance_target_scale > 0.0) {
            return Err(Error::Config("bundle scales must be positive".into()));
        }
        Ok(Self {
            ensemble: EnsembleModel {
                members,
                member_seeds: doc.member_seeds,
                window_len: doc.window_len,
                scaler: doc.scaler,
                histories: Vec::new(),
            },
            variance_net: VarianceNet {
                net,
                input_scaler: doc.variance_input_scaler,
                target_scale: doc.variance_target_scale,
                history: None,
            },
            provenance: doc.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
