use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `θ ← θ − lr·g`
    Sgd,
    /// Adaptive moments with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    #[default]
    Adam,
}

/// Plain gradient-descent update.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Config(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Stateful optimizer over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Self { kind, lr, m, v, t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.lr),
            OptimizerKind::Adam => {
                if params.len() != grads.len() || params.len() != self.m.len() {
                    return Err(Error::Config(format!(
                        "optimizer sized for {} parameters, got {} / {}",
                        self.m.len(),
                        params.len(),
                        grads.len()
                    )));
                }
                self.t = self.t.saturating_add(1);
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
                }
                Ok(())
            }
        }
    }
}
