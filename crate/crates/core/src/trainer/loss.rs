use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn clamped(p: f64) -> bool {
    !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// `-mean(log p_real) - mean(log(1 - p_fake))`.
pub fn d_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(-mean(real.iter().map(|&p| clamp(p).ln())) - mean(fake.iter().map(|&p| (1.0 - clamp(p)).ln())))
}

/// Non-saturating generator loss `-mean(log p_fake)`.
pub fn g_loss(fake: &[f64]) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(-mean(fake.iter().map(|&p| clamp(p).ln())))
}

/// Gradients of [`d_loss`] with respect to the real and fake logits. A
/// score outside the clamp range contributes no gradient.
pub fn d_loss_logit_grads(real: &[f64], fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    let dr = real
        .iter()
        .map(|&p| if clamped(p) { 0.0 } else { -(1.0 - p) / nr })
        .collect();
    let df = fake
        .iter()
        .map(|&p| if clamped(p) { 0.0 } else { p / nf })
        .collect();
    (dr, df)
}

/// Gradient of [`g_loss`] with respect to the fake logits.
pub fn g_loss_logit_grads(fake: &[f64]) -> Vec<f64> {
    let n = fake.len() as f64;
    fake.iter()
        .map(|&p| if clamped(p) { 0.0 } else { -(1.0 - p) / n })
        .collect()
}
