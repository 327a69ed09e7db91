use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::ModelDocument;
use super::{check_grad_finite, dot, ensure_batch, init_uniform, Network, Sample, MODEL_FORMAT_VERSION};
use crate::error::{Error, Result};

/// Lower bound on predicted variances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// One-hidden-layer tanh network whose scalar output is a log-variance.
///
/// Layout: hidden weights (`hidden × input`), hidden bias (`hidden`), output
/// weights (`hidden`), output bias. Trained against the Gaussian negative
/// log-likelihood with `Sample::target` holding a squared residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    input_dim: usize,
    hidden_dim: usize,
    data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("MLP dimensions must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            data: vec![0.0; hidden_dim * (input_dim + 2) + 1],
        })
    }

    pub fn random(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nw = hidden_dim * input_dim;
        init_uniform(&mut rng, &mut p.data[..nw], 1.0 / (input_dim as f64).sqrt());
        let vo = nw + hidden_dim;
        init_uniform(&mut rng, &mut p.data[vo..vo + hidden_dim], 1.0 / (hidden_dim as f64).sqrt());
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let nw = self.hidden_dim * self.input_dim;
        (nw, nw + self.hidden_dim, nw + 2 * self.hidden_dim)
    }

    pub fn set_output_bias(&mut self, b: f64) {
        let (_, _, co) = self.offsets();
        self.data[co] = b;
    }

    /// Log-variance for one input; fills `hidden` with tanh activations.
    fn forward(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let (d, hd) = (self.input_dim, self.hidden_dim);
        let (ao, vo, co) = self.offsets();
        let mut out = self.data[co];
        for k in 0..hd {
            hidden[k] = (self.data[ao + k] + dot(&self.data[k * d..(k + 1) * d], x)).tanh();
            out += self.data[vo + k] * hidden[k];
        }
        out
    }

    /// Predicted variance `max(exp(output), VARIANCE_FLOOR)`.
    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::Input(format!(
                "variance network expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut hidden = vec![0.0; self.hidden_dim];
        let v = self.forward(x, &mut hidden).exp().max(VARIANCE_FLOOR);
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite variance prediction".into()));
        }
        Ok(v)
    }

    fn describe(&self, index: usize) -> String {
        let (ao, vo, co) = self.offsets();
        if index < ao {
            format!("hidden.W[{}, {}]", index / self.input_dim, index % self.input_dim)
        } else if index < vo {
            format!("hidden.b[{}]", index - ao)
        } else if index < co {
            format!("out.w[{}]", index - vo)
        } else {
            "out.b".into()
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        let (ao, vo, co) = self.offsets();
        let mut weights = BTreeMap::new();
        weights.insert("hidden.W".into(), self.data[..ao].to_vec());
        weights.insert("hidden.b".into(), self.data[ao..vo].to_vec());
        weights.insert("out.w".into(), self.data[vo..co].to_vec());
        weights.insert("out.b".into(), vec![self.data[co]]);
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kind: "variance_mlp".into(),
            cell_variant: None,
            use_bias: true,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            weights,
            train_config: None,
            rng_seed: None,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        doc.check("variance_mlp")?;
        let mut p = Self::zeros(doc.input_dim, doc.hidden_dim)?;
        let (ao, vo, co) = p.offsets();
        doc.copy_block("hidden.W", &mut p.data[..ao])?;
        doc.copy_block("hidden.b", &mut p.data[ao..vo])?;
        doc.copy_block("out.w", &mut p.data[vo..co])?;
        doc.copy_block("out.b", &mut p.data[co..])?;
        Ok(p)
    }
}

impl Network for MlpParams {
    fn params(&self) -> &[f64] {
        &self.data
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn param_name(&self, index: usize) -> String {
        self.describe(index)
    }

    fn output(&self, input: &[f64]) -> Result<f64> {
        self.variance(input)
    }

    /// Mean of `½(r²/σ² + ln σ²)` over the batch.
    fn batch_loss(&self, batch: &[&Sample]) -> Result<f64> {
        ensure_batch(batch)?;
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut sum = 0.0;
        for s in batch {
            if s.input.len() != self.input_dim {
                return Err(Error::Input("variance network input width mismatch".into()));
            }
            let var = self.forward(&s.input, &mut hidden).exp().max(VARIANCE_FLOOR);
            sum += 0.5 * (s.target / var + var.ln());
        }
        let loss = sum / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite variance-network loss".into()));
        }
        Ok(loss)
    }

    fn loss_and_grad(&self, batch: &[&Sample], grad: &mut [f64]) -> Result<f64> {
        ensure_batch(batch)?;
        grad.fill(0.0);
        let (d, hd) = (self.input_dim, self.hidden_dim);
        let (ao, vo, co) = self.offsets();
        let n = batch.len() as f64;
        let mut hidden = vec![0.0; hd];
        let mut sum = 0.0;
        for s in batch {
            if s.input.len() != d {
                return Err(Error::Input("variance network input width mismatch".into()));
            }
            let out = self.forward(&s.input, &mut hidden);
            let raw = out.exp();
            let var = raw.max(VARIANCE_FLOOR);
            sum += 0.5 * (s.target / var + var.ln());
            if raw < VARIANCE_FLOOR {
                continue;
            }
            // d/d(out) of ½(r²·e^{-out} + out)
            let dout = 0.5 * (1.0 - s.target / var) / n;
            grad[co] += dout;
            for k in 0..hd {
                grad[vo + k] += dout * hidden[k];
                let da = dout * self.data[vo + k] * (1.0 - hidden[k] * hidden[k]);
                grad[ao + k] += da;
                for j in 0..d {
                    grad[k * d + j] += da * s.input[j];
                }
            }
        }
        let loss = sum / n;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite variance-network loss".into()));
        }
        check_grad_finite(self, grad)?;
        Ok(loss)
    }
}
