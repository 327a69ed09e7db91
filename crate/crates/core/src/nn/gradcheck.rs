use super::{Network, Sample};
use crate::error::{Error, Result};

/// Central finite-difference gradient of the mean batch loss.
pub fn numeric_gradient<N: Network>(model: &N, batch: &[Sample], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut probe = model.clone();
    let mut out = vec![0.0; model.params().len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + epsilon;
        let up = probe.batch_loss(&refs)?;
        probe.params_mut()[i] = orig - epsilon;
        let down = probe.batch_loss(&refs)?;
        probe.params_mut()[i] = orig;
        *slot = (up - down) / (2.0 * epsilon);
    }
    Ok(out)
}

/// `max |a − n| / max(|a|, |n|, 1e-8)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Largest relative disagreement between backpropagated and
/// finite-difference gradients.
pub fn grad_check<N: Network>(model: &N, batch: &[Sample], epsilon: f64) -> Result<f64> {
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut analytic = vec![0.0; model.params().len()];
    model.loss_and_grad(&refs, &mut analytic)?;
    let numeric = numeric_gradient(model, batch, epsilon)?;
    Ok(max_relative_error(&analytic, &numeric))
}
