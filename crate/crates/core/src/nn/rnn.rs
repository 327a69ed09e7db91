use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::ModelDocument;
use super::train::{fit, TrainingHistory};
use super::{check_grad_finite, dot, ensure_batch, init_uniform, Network, Sample, TrainConfig, MODEL_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

/// Elman cell `h = tanh(U·x + W·h₋₁ + b)` with a dense read-out.
///
/// Layout: `U` (`hidden × input`), `W` (`hidden × hidden`), `b` (`hidden`),
/// dense weights (`hidden`), dense bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    input_dim: usize,
    hidden_dim: usize,
    data: Vec<f64>,
}

impl RnnParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("RNN dimensions must be positive".into()));
        }
        let n = hidden_dim * (input_dim + hidden_dim + 2) + 1;
        Ok(Self {
            input_dim,
            hidden_dim,
            data: vec![0.0; n],
        })
    }

    pub fn random(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let (u, w, d) = (p.u_range(), p.w_range(), p.dense_range());
        init_uniform(&mut rng, &mut p.data[u], bound);
        init_uniform(&mut rng, &mut p.data[w], bound);
        init_uniform(&mut rng, &mut p.data[d], bound);
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

    fn u_range(&self) -> std::ops::Range<usize> {
        0..self.hidden_dim * self.input_dim
    }

    fn w_range(&self) -> std::ops::Range<usize> {
        let s = self.u_range().end;
        s..s + self.hidden_dim * self.hidden_dim
    }

    fn b_range(&self) -> std::ops::Range<usize> {
        let s = self.w_range().end;
        s..s + self.hidden_dim
    }

    fn dense_range(&self) -> std::ops::Range<usize> {
        let s = self.b_range().end;
        s..s + self.hidden_dim
    }

    pub fn input_weights(&self) -> &[f64] {
        &self.data[self.u_range()]
    }

    pub fn input_weights_mut(&mut self) -> &mut [f64] {
        let r = self.u_range();
        &mut self.data[r]
    }

    pub fn recurrent_weights(&self) -> &[f64] {
        &self.data[self.w_range()]
    }

    pub fn recurrent_weights_mut(&mut self) -> &mut [f64] {
        let r = self.w_range();
        &mut self.data[r]
    }

    pub fn bias(&self) -> &[f64] {
        &self.data[self.b_range()]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        let r = self.b_range();
        &mut self.data[r]
    }

    pub fn dense_weights(&self) -> &[f64] {
        &self.data[self.dense_range()]
    }

    pub fn dense_weights_mut(&mut self) -> &mut [f64] {
        let r = self.dense_range();
        &mut self.data[r]
    }

    pub fn dense_bias(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn set_dense_bias(&mut self, b: f64) {
        let n = self.data.len();
        self.data[n - 1] = b;
    }

    fn describe(&self, index: usize) -> String {
        let (hd, d) = (self.hidden_dim, self.input_dim);
        if self.u_range().contains(&index) {
            format!("U[{}, {}]", index / d, index % d)
        } else if self.w_range().contains(&index) {
            let r = index - self.w_range().start;
            format!("W[{}, {}]", r / hd, r % hd)
        } else if self.b_range().contains(&index) {
            format!("b[{}]", index - self.b_range().start)
        } else if self.dense_range().contains(&index) {
            format!("dense.w[{}]", index - self.dense_range().start)
        } else {
            "dense.b".into()
        }
    }
}

fn elman_step(p: &RnnParams, x: &[f64], h_prev: &[f64], h: &mut [f64]) {
    let (hd, d) = (p.hidden_dim, p.input_dim);
    let u = p.input_weights();
    let w = p.recurrent_weights();
    let b = p.bias();
    for k in 0..hd {
        h[k] = (b[k] + dot(&u[k * d..(k + 1) * d], x) + dot(&w[k * hd..(k + 1) * hd], h_prev)).tanh();
    }
}

/// One Elman step from `h_prev`.
pub fn rnn_cell_forward(x: &[f64], h_prev: &[f64], p: &RnnParams) -> Result<Vec<f64>> {
    if x.len() != p.input_dim || h_prev.len() != p.hidden_dim {
        return Err(Error::Config(format!(
            "RNN step got input {} / state {}, expected {} / {}",
            x.len(),
            h_prev.len(),
            p.input_dim,
            p.hidden_dim
        )));
    }
    let mut h = vec![0.0; p.hidden_dim];
    elman_step(p, x, h_prev, &mut h);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite RNN state".into()));
    }
    Ok(h)
}

/// Runs a scalar window through the Elman cell from a zero state and
/// applies the dense read-out.
pub fn rnn_model_forward(window: &[f64], p: &RnnParams) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Input("empty input window".into()));
    }
    if p.input_dim != 1 {
        return Err(Error::Config(format!(
            "scalar windows need input_dim 1, model has {}",
            p.input_dim
        )));
    }
    let mut hs = vec![0.0; p.hidden_dim * window.len()];
    let y = run(p, window, &mut hs);
    if !y.is_finite() {
        return Err(Error::Numeric("non-finite RNN output".into()));
    }
    Ok(y)
}

fn run(p: &RnnParams, window: &[f64], hs: &mut [f64]) -> f64 {
    let hd = p.hidden_dim;
    let zeros = vec![0.0; hd];
    for t in 0..window.len() {
        let (done, rest) = hs.split_at_mut(t * hd);
        let h_prev = if t == 0 { &zeros[..] } else { &done[(t - 1) * hd..] };
        elman_step(p, std::slice::from_ref(&window[t]), h_prev, &mut rest[..hd]);
    }
    let last = &hs[(window.len() - 1) * hd..window.len() * hd];
    p.dense_weights().iter().zip(last).map(|(w, h)| w * h).sum::<f64>() + p.dense_bias()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub params: RnnParams,
    pub train_config: Option<TrainConfig>,
}

impl RnnModel {
    pub fn new(params: RnnParams) -> Self {
        Self {
            params,
            train_config: None,
        }
    }

    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self::new(RnnParams::random(1, cfg.hidden_dim, derive_seed(cfg.rng_seed, 1))?))
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        rnn_model_forward(window, &self.params)
    }

    pub fn to_document(&self) -> ModelDocument {
        let p = &self.params;
        let mut weights = BTreeMap::new();
        weights.insert("U".into(), p.input_weights().to_vec());
        weights.insert("W".into(), p.recurrent_weights().to_vec());
        weights.insert("b".into(), p.bias().to_vec());
        weights.insert("dense.w".into(), p.dense_weights().to_vec());
        weights.insert("dense.b".into(), vec![p.dense_bias()]);
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kind: "rnn".into(),
            cell_variant: None,
            use_bias: true,
            input_dim: p.input_dim,
            hidden_dim: p.hidden_dim,
            weights,
            rng_seed: self.train_config.as_ref().map(|c| c.rng_seed),
            train_config: self.train_config.clone(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        doc.check("rnn")?;
        let mut p = RnnParams::zeros(doc.input_dim, doc.hidden_dim)?;
        doc.copy_block("U", p.input_weights_mut())?;
        doc.copy_block("W", p.recurrent_weights_mut())?;
        doc.copy_block("b", p.bias_mut())?;
        doc.copy_block("dense.w", p.dense_weights_mut())?;
        let mut b = [0.0];
        doc.copy_block("dense.b", &mut b)?;
        p.set_dense_bias(b[0]);
        Ok(Self {
            params: p,
            train_config: doc.train_config.clone(),
        })
    }
}

impl Network for RnnModel {
    fn params(&self) -> &[f64] {
        self.params.as_slice()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.params.as_mut_slice()
    }

    fn param_name(&self, index: usize) -> String {
        self.params.describe(index)
    }

    fn output(&self, input: &[f64]) -> Result<f64> {
        self.predict(input)
    }

    fn batch_loss(&self, batch: &[&Sample]) -> Result<f64> {
        ensure_batch(batch)?;
        let mut sum = 0.0;
        for s in batch {
            let y = self.predict(&s.input)?;
            sum += (y - s.target) * (y - s.target);
        }
        Ok(sum / batch.len() as f64)
    }

    fn loss_and_grad(&self, batch: &[&Sample], grad: &mut [f64]) -> Result<f64> {
        ensure_batch(batch)?;
        let p = &self.params;
        if p.input_dim != 1 {
            return Err(Error::Config("window training needs input_dim 1".into()));
        }
        grad.fill(0.0);
        let hd = p.hidden_dim;
        let n = batch.len() as f64;
        let (ur, wr, br, dr) = (p.u_range(), p.w_range(), p.b_range(), p.dense_range());
        let zeros = vec![0.0; hd];
        let mut dh = vec![0.0; hd];
        let mut dh_prev = vec![0.0; hd];
        let mut da = vec![0.0; hd];
        let mut sum = 0.0;
        for s in batch {
            let steps = s.input.len();
            if steps == 0 {
                return Err(Error::Input("empty input window".into()));
            }
            let mut hs = vec![0.0; hd * steps];
            let y = run(p, &s.input, &mut hs);
            let r = y - s.target;
            sum += r * r;
            let dy = 2.0 * r / n;
            let last = &hs[(steps - 1) * hd..];
            for k in 0..hd {
                grad[dr.start + k] += dy * last[k];
                dh[k] = dy * p.data[dr.start + k];
            }
            *grad.last_mut().unwrap() += dy;
            for t in (0..steps).rev() {
                let h = &hs[t * hd..(t + 1) * hd];
                let h_prev = if t == 0 { &zeros[..] } else { &hs[(t - 1) * hd..t * hd] };
                for k in 0..hd {
                    da[k] = dh[k] * (1.0 - h[k] * h[k]);
                }
                dh_prev.fill(0.0);
                for k in 0..hd {
                    let a = da[k];
                    grad[ur.start + k] += a * s.input[t];
                    grad[br.start + k] += a;
                    let row = wr.start + k * hd;
                    for j in 0..hd {
                        grad[row + j] += a * h_prev[j];
                        dh_prev[j] += p.data[row + j] * a;
                    }
                }
                std::mem::swap(&mut dh, &mut dh_prev);
            }
        }
        let loss = sum / n;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite RNN loss".into()));
        }
        check_grad_finite(self, grad)?;
        Ok(loss)
    }
}

/// Trains an Elman predictor with MSE loss and early stopping on `val`.
pub fn train_rnn(
    pairs: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(RnnModel, TrainingHistory)> {
    cfg.validate()?;
    crate::audit::record(crate::audit::Component::RnnFit);
    let model = RnnModel::init(cfg)?;
    let (mut model, history) = fit(model, pairs, val, cfg)?;
    model.train_config = Some(cfg.clone());
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_output_zero() {
        let p = RnnParams::zeros(1, 3).unwrap();
        assert_eq!(rnn_model_forward(&[1.0, -2.0, 5.0], &p).unwrap(), 0.0);
    }

    #[test]
    fn scalar_hand_computation() {
        let mut p = RnnParams::zeros(1, 1).unwrap();
        p.input_weights_mut()[0] = 0.5;
        p.recurrent_weights_mut()[0] = -0.3;
        p.bias_mut()[0] = 0.1;
        p.dense_weights_mut()[0] = 2.0;
        p.set_dense_bias(-0.25);
        let h1 = (0.5f64 * 1.0 + 0.1).tanh();
        let h2 = (0.5f64 * 2.0 - 0.3 * h1 + 0.1).tanh();
        let expected = 2.0 * h2 - 0.25;
        let y = rnn_model_forward(&[1.0, 2.0], &p).unwrap();
        assert!((y - expected).abs() < 1e-12);
    }

    #[test]
    fn document_round_trip() {
        let m = RnnModel::new(RnnParams::random(1, 4, 3).unwrap());
        let doc = m.to_document();
        let json = serde_json::to_string(&doc).unwrap();
        let back = RnnModel::from_document(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(crate::nn::LstmModel::from_document(&doc).is_err());
    }
}
