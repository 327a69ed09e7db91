use crate::error::{Error, Result};

/// Mean of squared differences between `preds` and `labels`.
pub fn mse_loss(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("mse_loss needs at least one element".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l) * (p - l))
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Gaussian negative log-likelihood (up to constants) of squared residuals
/// `r2` under variances `sigma2`: `½ Σ (r²/σ² + ln σ²)`.
pub fn nll_loss(r2: &[f64], sigma2: &[f64]) -> Result<f64> {
    if r2.len() != sigma2.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} residuals vs {} variances",
            r2.len(),
            sigma2.len()
        )));
    }
    let mut sum = 0.0;
    for (r, s) in r2.iter().zip(sigma2) {
        if !(*s > 0.0) {
            return Err(Error::Domain(format!("variance must be positive, got {s}")));
        }
        sum += r / s + s.ln();
    }
    Ok(0.5 * sum)
}
