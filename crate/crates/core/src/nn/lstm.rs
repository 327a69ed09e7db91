use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainingHistory};
use super::{
    check_grad_finite, dot, ensure_batch, init_uniform, sigmoid, Network, Sample, TrainConfig,
    MODEL_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

/// Cell-state update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVariant {
    /// `C = f·C₋₁ + i·C̃`, `h = o·tanh(C)`.
    #[default]
    Standard,
    /// `C = σ(f·C₋₁ + i·C̃)`, `h = tanh(C·o)`.
    Squashed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    Input,
    Output,
    Forget,
    /// The tanh candidate `C̃`.
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Output, Gate::Forget, Gate::Candidate];

    fn index(self) -> usize {
        match self {
            Gate::Input => 0,
            Gate::Output => 1,
            Gate::Forget => 2,
            Gate::Candidate => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Output => "output",
            Gate::Forget => "forget",
            Gate::Candidate => "candidate",
        }
    }
}

/// LSTM cell plus dense read-out, stored flat.
///
/// Layout: for each gate in [`Gate::ALL`] order, the input weights `U`
/// (`hidden × input`, row-major), the recurrent weights `W`
/// (`hidden × hidden`) and the bias (`hidden`); then the dense weights
/// (`hidden`) and the dense bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    input_dim: usize,
    hidden_dim: usize,
    data: Vec<f64>,
}

impl LstmParams {
    fn expected_len(input_dim: usize, hidden_dim: usize) -> usize {
        4 * hidden_dim * (input_dim + hidden_dim + 1) + hidden_dim + 1
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("LSTM dimensions must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            data: vec![0.0; Self::expected_len(input_dim, hidden_dim)],
        })
    }

    pub fn from_flat(input_dim: usize, hidden_dim: usize, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim)?;
        if data.len() != p.data.len() {
            return Err(Error::Config(format!(
                "expected {} LSTM parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite LSTM parameter".into()));
        }
        p.data = data;
        Ok(p)
    }

    /// Weights uniform in `±1/√hidden`, gate biases zero except the forget
    /// gate at +1 (when biases are enabled).
    pub fn random(input_dim: usize, hidden_dim: usize, use_bias: bool, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for g in Gate::ALL {
            init_uniform(&mut rng, p.input_weights_mut(g), bound);
            init_uniform(&mut rng, p.recurrent_weights_mut(g), bound);
        }
        init_uniform(&mut rng, p.dense_weights_mut(), bound);
        if use_bias {
            p.bias_mut(Gate::Forget).fill(1.0);
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn block_len(&self) -> usize {
        self.hidden_dim * (self.input_dim + self.hidden_dim + 1)
    }

    fn u_offset(&self, g: Gate) -> usize {
        g.index() * self.block_len()
    }

    fn w_offset(&self, g: Gate) -> usize {
        self.u_offset(g) + self.hidden_dim * self.input_dim
    }

    fn b_offset(&self, g: Gate) -> usize {
        self.w_offset(g) + self.hidden_dim * self.hidden_dim
    }

    fn dense_offset(&self) -> usize {
        4 * self.block_len()
    }

    pub fn input_weights(&self, g: Gate) -> &[f64] {
        let o = self.u_offset(g);
        &self.data[o..o + self.hidden_dim * self.input_dim]
    }

    pub fn input_weights_mut(&mut self, g: Gate) -> &mut [f64] {
        let o = self.u_offset(g);
        let n = self.hidden_dim * self.input_dim;
        &mut self.data[o..o + n]
    }

    pub fn recurrent_weights(&self, g: Gate) -> &[f64] {
        let o = self.w_offset(g);
        &self.data[o..o + self.hidden_dim * self.hidden_dim]
    }

    pub fn recurrent_weights_mut(&mut self, g: Gate) -> &mut [f64] {
        let o = self.w_offset(g);
        let n = self.hidden_dim * self.hidden_dim;
        &mut self.data[o..o + n]
    }

    pub fn bias(&self, g: Gate) -> &[f64] {
        let o = self.b_offset(g);
        &self.data[o..o + self.hidden_dim]
    }

    pub fn bias_mut(&mut self, g: Gate) -> &mut [f64] {
        let o = self.b_offset(g);
        let n = self.hidden_dim;
        &mut self.data[o..o + n]
    }

    pub fn dense_weights(&self) -> &[f64] {
        let o = self.dense_offset();
        &self.data[o..o + self.hidden_dim]
    }

    pub fn dense_weights_mut(&mut self) -> &mut [f64] {
        let o = self.dense_offset();
        let n = self.hidden_dim;
        &mut self.data[o..o + n]
    }

    pub fn dense_bias(&self) -> f64 {
        self.data[self.dense_offset() + self.hidden_dim]
    }

    pub fn set_dense_bias(&mut self, b: f64) {
        let o = self.dense_offset() + self.hidden_dim;
        self.data[o] = b;
    }

    fn is_gate_bias(&self, index: usize) -> bool {
        Gate::ALL.iter().any(|&g| {
            let o = self.b_offset(g);
            (o..o + self.hidden_dim).contains(&index)
        })
    }

    fn describe(&self, index: usize) -> String {
        if index >= self.dense_offset() {
            let k = index - self.dense_offset();
            return if k == self.hidden_dim {
                "dense.b".to_string()
            } else {
                format!("dense.w[{k}]")
            };
        }
        let g = Gate::ALL[index / self.block_len()];
        let r = index - self.u_offset(g);
        let nu = self.hidden_dim * self.input_dim;
        let nw = self.hidden_dim * self.hidden_dim;
        if r < nu {
            format!("{}.U[{}, {}]", g.name(), r / self.input_dim, r % self.input_dim)
        } else if r < nu + nw {
            let r = r - nu;
            format!("{}.W[{}, {}]", g.name(), r / self.hidden_dim, r % self.hidden_dim)
        } else {
            format!("{}.b[{}]", g.name(), r - nu - nw)
        }
    }
}

/// Hidden and cell vectors carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// One cell step. Writes gate activations (`i, o, f, C̃` blocks of length
/// `hidden`) into `gates`, the new cell into `c`, the new hidden state into
/// `h`, and `tanh(C)` (standard) or `tanh(C·o)` (squashed) into `aux`.
#[allow(clippy::too_many_arguments)]
fn step(
    p: &LstmParams,
    variant: CellVariant,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    h: &mut [f64],
    aux: &mut [f64],
) {
    let hd = p.hidden_dim;
    let d = p.input_dim;
    let data = &p.data;
    for (q, g) in Gate::ALL.iter().enumerate() {
        let (uo, wo, bo) = (p.u_offset(*g), p.w_offset(*g), p.b_offset(*g));
        for k in 0..hd {
            let a = data[bo + k]
                + dot(&data[uo + k * d..uo + (k + 1) * d], x)
                + dot(&data[wo + k * hd..wo + (k + 1) * hd], h_prev);
            gates[q * hd + k] = if *g == Gate::Candidate {
                a.tanh()
            } else {
                sigmoid(a)
            };
        }
    }
    for k in 0..hd {
        let i = gates[k];
        let o = gates[hd + k];
        let f = gates[2 * hd + k];
        let cand = gates[3 * hd + k];
        let s = f * c_prev[k] + i * cand;
        match variant {
            CellVariant::Standard => {
                c[k] = s;
                aux[k] = s.tanh();
                h[k] = o * aux[k];
            }
            CellVariant::Squashed => {
                c[k] = sigmoid(s);
                aux[k] = (c[k] * o).tanh();
                h[k] = aux[k];
            }
        }
    }
}

/// Advances the cell by one input vector.
pub fn lstm_cell_forward(
    x: &[f64],
    prev: &LstmState,
    p: &LstmParams,
    variant: CellVariant,
) -> Result<LstmState> {
    let hd = p.hidden_dim;
    if x.len() != p.input_dim {
        return Err(Error::Config(format!(
            "input has {} entries, cell expects {}",
            x.len(),
            p.input_dim
        )));
    }
    if prev.h.len() != hd || prev.c.len() != hd {
        return Err(Error::Config(format!(
            "state dimension {} / {} does not match hidden_dim {hd}",
            prev.h.len(),
            prev.c.len()
        )));
    }
    let mut gates = vec![0.0; 4 * hd];
    let mut next = LstmState::zeros(hd);
    let mut aux = vec![0.0; hd];
    step(
        p, variant, x, &prev.h, &prev.c, &mut gates, &mut next.c, &mut next.h, &mut aux,
    );
    if next.h.iter().chain(&next.c).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite LSTM state".into()));
    }
    Ok(next)
}

/// Feeds `window` one scalar at a time from a zero state and applies the
/// dense layer to the final hidden vector.
pub fn model_forward(window: &[f64], p: &LstmParams, variant: CellVariant) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Input("empty input window".into()));
    }
    if p.input_dim != 1 {
        return Err(Error::Config(format!(
            "scalar windows need input_dim 1, model has {}",
            p.input_dim
        )));
    }
    let mut trace = Trace::new(p.hidden_dim, window.len());
    let y = trace.run(p, variant, window);
    if !y.is_finite() {
        return Err(Error::Numeric("non-finite LSTM output".into()));
    }
    Ok(y)
}

/// Forward activations for every step of one window, kept for BPTT.
struct Trace {
    hidden: usize,
    steps: usize,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    aux: Vec<f64>,
    zeros: Vec<f64>,
}

impl Trace {
    fn new(hidden: usize, steps: usize) -> Self {
        Self {
            hidden,
            steps,
            gates: vec![0.0; 4 * hidden * steps],
            c: vec![0.0; hidden * steps],
            h: vec![0.0; hidden * steps],
            aux: vec![0.0; hidden * steps],
            zeros: vec![0.0; hidden],
        }
    }

    fn resize(&mut self, steps: usize) {
        if steps != self.steps {
            *self = Trace::new(self.hidden, steps);
        }
    }

    fn run(&mut self, p: &LstmParams, variant: CellVariant, window: &[f64]) -> f64 {
        let hd = self.hidden;
        self.resize(window.len());
        for t in 0..window.len() {
            let (h_done, h_rest) = self.h.split_at_mut(t * hd);
            let (c_done, c_rest) = self.c.split_at_mut(t * hd);
            let h_prev = if t == 0 { &self.zeros[..] } else { &h_done[(t - 1) * hd..] };
            let c_prev = if t == 0 { &self.zeros[..] } else { &c_done[(t - 1) * hd..] };
            step(
                p,
                variant,
                std::slice::from_ref(&window[t]),
                h_prev,
                c_prev,
                &mut self.gates[4 * hd * t..4 * hd * (t + 1)],
                &mut c_rest[..hd],
                &mut h_rest[..hd],
                &mut self.aux[hd * t..hd * (t + 1)],
            );
        }
        let last = &self.h[(window.len() - 1) * hd..];
        p.dense_weights()
            .iter()
            .zip(last)
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + p.dense_bias()
    }

    /// Accumulates `∂(dy·y)/∂θ` into `grad`.
    fn backward(
        &self,
        p: &LstmParams,
        variant: CellVariant,
        window: &[f64],
        dy: f64,
        grad: &mut [f64],
        scratch: &mut BackScratch,
    ) {
        let hd = self.hidden;
        let steps = window.len();
        let dense = p.dense_offset();
        let last = &self.h[(steps - 1) * hd..steps * hd];
        for k in 0..hd {
            grad[dense + k] += dy * last[k];
            scratch.dh[k] = dy * p.data[dense + k];
            scratch.dc_next[k] = 0.0;
        }
        grad[dense + hd] += dy;

        for t in (0..steps).rev() {
            let x = window[t];
            let gates = &self.gates[4 * hd * t..4 * hd * (t + 1)];
            let c = &self.c[hd * t..hd * (t + 1)];
            let aux = &self.aux[hd * t..hd * (t + 1)];
            let h_prev = if t == 0 { &self.zeros[..] } else { &self.h[hd * (t - 1)..hd * t] };
            let c_prev = if t == 0 { &self.zeros[..] } else { &self.c[hd * (t - 1)..hd * t] };
            let da = &mut scratch.da;
            for k in 0..hd {
                let i = gates[k];
                let o = gates[hd + k];
                let f = gates[2 * hd + k];
                let g = gates[3 * hd + k];
                let dh = scratch.dh[k];
                let (d_out, d_pre) = match variant {
                    CellVariant::Standard => {
                        let tc = aux[k];
                        let d_out = dh * tc;
                        let dc = scratch.dc_next[k] + dh * o * (1.0 - tc * tc);
                        (d_out, dc)
                    }
                    CellVariant::Squashed => {
                        let th = aux[k];
                        let du = dh * (1.0 - th * th);
                        let d_out = du * c[k];
                        let dc = scratch.dc_next[k] + du * o;
                        (d_out, dc * c[k] * (1.0 - c[k]))
                    }
                };
                scratch.dc_next[k] = d_pre * f;
                da[k] = d_pre * g * i * (1.0 - i);
                da[hd + k] = d_out * o * (1.0 - o);
                da[2 * hd + k] = d_pre * c_prev[k] * f * (1.0 - f);
                da[3 * hd + k] = d_pre * i * (1.0 - g * g);
            }
            scratch.dh_prev.fill(0.0);
            for (q, gate) in Gate::ALL.iter().enumerate() {
                let (uo, wo, bo) = (p.u_offset(*gate), p.w_offset(*gate), p.b_offset(*gate));
                for k in 0..hd {
                    let a = da[q * hd + k];
                    if a == 0.0 {
                        continue;
                    }
                    // input_dim is 1 for windowed scalar series
                    grad[uo + k] += a * x;
                    grad[bo + k] += a;
                    let wrow = wo + k * hd;
                    for (gw, hp) in grad[wrow..wrow + hd].iter_mut().zip(h_prev) {
                        *gw += a * hp;
                    }
                    for (dp, pw) in scratch.dh_prev.iter_mut().zip(&p.data[wrow..wrow + hd]) {
                        *dp += pw * a;
                    }
                }
            }
            std::mem::swap(&mut scratch.dh, &mut scratch.dh_prev);
        }
    }
}

struct BackScratch {
    dh: Vec<f64>,
    dh_prev: Vec<f64>,
    dc_next: Vec<f64>,
    da: Vec<f64>,
}

impl BackScratch {
    fn new(hidden: usize) -> Self {
        Self {
            dh: vec![0.0; hidden],
            dh_prev: vec![0.0; hidden],
            dc_next: vec![0.0; hidden],
            da: vec![0.0; 4 * hidden],
        }
    }
}

/// LSTM predictor: cell parameters plus the flags that shape its equations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub params: LstmParams,
    pub variant: CellVariant,
    pub use_bias: bool,
    /// Configuration the model was trained with, if any.
    pub train_config: Option<TrainConfig>,
}

impl LstmModel {
    pub fn new(params: LstmParams, variant: CellVariant, use_bias: bool) -> Self {
        Self {
            params,
            variant,
            use_bias,
            train_config: None,
        }
    }

    /// Freshly initialized scalar-input model for `cfg`.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let params = LstmParams::random(1, cfg.hidden_dim, cfg.use_bias, derive_seed(cfg.rng_seed, 1))?;
        Ok(Self::new(params, cfg.cell_variant, cfg.use_bias))
    }

    fn check_scalar_input(&self) -> Result<()> {
        if self.params.input_dim != 1 {
            return Err(Error::Config(format!(
                "window training needs input_dim 1, model has {}",
                self.params.input_dim
            )));
        }
        Ok(())
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        model_forward(window, &self.params, self.variant)
    }

    pub fn to_document(&self) -> ModelDocument {
        let p = &self.params;
        let mut weights = BTreeMap::new();
        for g in Gate::ALL {
            weights.insert(format!("{}.U", g.name()), p.input_weights(g).to_vec());
            weights.insert(format!("{}.W", g.name()), p.recurrent_weights(g).to_vec());
            weights.insert(format!("{}.b", g.name()), p.bias(g).to_vec());
        }
        weights.insert("dense.w".into(), p.dense_weights().to_vec());
        weights.insert("dense.b".into(), vec![p.dense_bias()]);
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kind: "lstm".into(),
            cell_variant: Some(self.variant),
            use_bias: self.use_bias,
            input_dim: p.input_dim,
            hidden_dim: p.hidden_dim,
            weights,
            rng_seed: self.train_config.as_ref().map(|c| c.rng_seed),
            train_config: self.train_config.clone(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        doc.check("lstm")?;
        let mut p = LstmParams::zeros(doc.input_dim, doc.hidden_dim)?;
        for g in Gate::ALL {
            doc.copy_block(&format!("{}.U", g.name()), p.input_weights_mut(g))?;
            doc.copy_block(&format!("{}.W", g.name()), p.recurrent_weights_mut(g))?;
            doc.copy_block(&format!("{}.b", g.name()), p.bias_mut(g))?;
        }
        doc.copy_block("dense.w", p.dense_weights_mut())?;
        let mut b = [0.0];
        doc.copy_block("dense.b", &mut b)?;
        p.set_dense_bias(b[0]);
        let mut m = Self::new(p, doc.cell_variant.unwrap_or_default(), doc.use_bias);
        m.train_config = doc.train_config.clone();
        Ok(m)
    }
}

impl Network for LstmModel {
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
        self.check_scalar_input()?;
        let mut trace = Trace::new(self.params.hidden_dim, batch[0].input.len());
        let mut sum = 0.0;
        for s in batch {
            if s.input.is_empty() {
                return Err(Error::Input("empty input window".into()));
            }
            let y = trace.run(&self.params, self.variant, &s.input);
            sum += (y - s.target) * (y - s.target);
        }
        let loss = sum / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite LSTM loss".into()));
        }
        Ok(loss)
    }

    fn loss_and_grad(&self, batch: &[&Sample], grad: &mut [f64]) -> Result<f64> {
        ensure_batch(batch)?;
        self.check_scalar_input()?;
        grad.fill(0.0);
        let hd = self.params.hidden_dim;
        let mut trace = Trace::new(hd, batch[0].input.len());
        let mut scratch = BackScratch::new(hd);
        let n = batch.len() as f64;
        let mut sum = 0.0;
        for s in batch {
            if s.input.is_empty() {
                return Err(Error::Input("empty input window".into()));
            }
            let y = trace.run(&self.params, self.variant, &s.input);
            let r = y - s.target;
            sum += r * r;
            trace.backward(&self.params, self.variant, &s.input, 2.0 * r / n, grad, &mut scratch);
        }
        if !self.use_bias {
            for (i, g) in grad.iter_mut().enumerate() {
                if self.params.is_gate_bias(i) {
                    *g = 0.0;
                }
            }
        }
        let loss = sum / n;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite LSTM loss".into()));
        }
        check_grad_finite(self, grad)?;
        Ok(loss)
    }
}

/// Trains a scalar-window LSTM predictor with MSE loss and early stopping
/// on `val`. The returned model holds the best-validation parameters.
pub fn train(
    pairs: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(LstmModel, TrainingHistory)> {
    cfg.validate()?;
    crate::audit::record(crate::audit::Component::LstmFit);
    let model = LstmModel::init(cfg)?;
    let (mut model, history) = fit(model, pairs, val, cfg)?;
    model.train_config = Some(cfg.clone());
    Ok((model, history))
}

/// Versioned, self-describing serialization of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_variant: Option<CellVariant>,
    pub use_bias: bool,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Row-major weight blocks by name.
    pub weights: BTreeMap<String, Vec<f64>>,
    pub train_config: Option<TrainConfig>,
    pub rng_seed: Option<u64>,
}

impl ModelDocument {
    pub(crate) fn check(&self, kind: &str) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.kind != kind {
            return Err(Error::Config(format!(
                "expected a {kind} model document, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub(crate) fn copy_block(&self, name: &str, out: &mut [f64]) -> Result<()> {
        let block = self
            .weights
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing weight block {name}")))?;
        if block.len() != out.len() {
            return Err(Error::Config(format!(
                "weight block {name} has {} entries, expected {}",
                block.len(),
                out.len()
            )));
        }
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry in {name}")));
        }
        out.copy_from_slice(block);
        Ok(())
    }
}
