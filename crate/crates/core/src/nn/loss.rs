use crate::error::{Error, Result};

/// Probabilities are clipped to `[PROB_EPS, 1 − PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} targets",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Dimension("empty prediction".into()));
    }
    Ok(())
}

#[inline]
fn term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over all voxels.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    check(p, y)?;
    Ok(p.iter().zip(y).map(|(&p, &y)| term(p, y)).sum::<f64>() / p.len() as f64)
}

/// Loss and its gradient with respect to the probabilities. Clipped
/// entries have zero gradient.
pub fn bce_loss_grad(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = bce_loss(p, y)?;
    let n = p.len() as f64;
    let grad = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                0.0
            } else {
                (-(y / p) + (1.0 - y) / (1.0 - p)) / n
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Fused sigmoid + BCE: returns the loss on `sigmoid(z)` and its gradient
/// with respect to the logits `z`.
pub fn bce_with_logits(z: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(z, y)?;
    let n = z.len() as f64;
    let mut loss = 0.0;
    let grad = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| {
            let p = sigmoid(z);
            loss += term(p, y);
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                0.0
            } else {
                (p - y) / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}
