//! A small neural-network engine: LSTM and Elman cells with a dense read-out,
//! a one-hidden-layer variance network, exact backpropagation through time,
//! optimizers, an early-stopping trainer and a finite-difference checker.
//!
//! Every network keeps its parameters in one flat `Vec<f64>` with a fixed
//! block layout, so optimizers and the gradient checker work on any of them
//! through the [`Network`] trait.

mod gradcheck;
mod loss;
mod lstm;
mod mlp;
mod optim;
mod rnn;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, max_relative_error, numeric_gradient};
pub use loss::{mse_loss, nll_loss};
pub use lstm::{
    lstm_cell_forward, model_forward, train, CellVariant, Gate, LstmModel, LstmParams, LstmState,
    ModelDocument,
};
pub use mlp::{MlpParams, VARIANCE_FLOOR};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
pub use rnn::{rnn_cell_forward, rnn_model_forward, train_rnn, RnnModel, RnnParams};
pub use train::{fit, EpochRecord, TrainingHistory};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One supervised example: an input window and a scalar target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: f64,
}

impl Sample {
    pub fn new(input: Vec<f64>, target: f64) -> Self {
        Self { input, target }
    }
}

/// Objective a network is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared prediction error.
    Mse,
    /// Gaussian negative log-likelihood of squared residuals.
    Nll,
}

/// Hyper-parameters shared by every trainer in the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub hidden_dim: usize,
    pub optimizer: OptimizerKind,
    pub rng_seed: u64,
    #[serde(default)]
    pub cell_variant: CellVariant,
    /// Per-gate bias terms. Disable for the bias-free gate equations.
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 300,
            batch_size: 32,
            patience: 20,
            hidden_dim: 32,
            optimizer: OptimizerKind::Adam,
            rng_seed: 0,
            cell_variant: CellVariant::Standard,
            use_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs, batch_size and patience must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// A differentiable model with flat parameter storage.
pub trait Network: Clone + Send + Sync {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Human-readable name of the parameter at flat position `index`.
    fn param_name(&self, index: usize) -> String;
    /// Model output for one input.
    fn output(&self, input: &[f64]) -> Result<f64>;
    /// Mean loss over `batch`.
    fn batch_loss(&self, batch: &[&Sample]) -> Result<f64>;
    /// Mean loss over `batch`; `grad` is overwritten with its gradient.
    fn loss_and_grad(&self, batch: &[&Sample], grad: &mut [f64]) -> Result<f64>;
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub(crate) fn init_uniform<R: Rng>(rng: &mut R, out: &mut [f64], bound: f64) {
    for v in out.iter_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
}

pub(crate) fn check_grad_finite<N: Network>(net: &N, grad: &[f64]) -> Result<()> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter {}",
            net.param_name(i)
        )));
    }
    Ok(())
}

pub(crate) fn ensure_batch(batch: &[&Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    Ok(())
}
