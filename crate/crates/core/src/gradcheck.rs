//! Central finite differences for verifying hand-written backward passes.
//!
//! Only forward evaluations are used here, so the checker stays independent of
//! the backward code it verifies.

/// Outcome for a single parameter coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / denom
    }
}

/// Default denominator floor for relative errors.
///
/// Central differences at step 1e-6 carry roughly 1e-10 of rounding noise in
/// 64-bit arithmetic; coordinates whose true gradient is below this floor are
/// compared on an absolute scale of `floor * tolerance`.
pub const REL_FLOOR: f64 = 1e-6;

/// Central difference of `loss` at `params[index]`.
pub fn central_difference(
    params: &mut [f64],
    index: usize,
    step: f64,
    loss: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    let orig = params[index];
    params[index] = orig + step;
    let plus = loss(params);
    params[index] = orig - step;
    let minus = loss(params);
    params[index] = orig;
    (plus - minus) / (2.0 * step)
}

/// Probes the listed coordinates against an analytic gradient.
pub fn probe(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    loss: &mut dyn FnMut(&[f64]) -> f64,
) -> Vec<Probe> {
    let mut work = params.to_vec();
    indices
        .iter()
        .map(|&index| Probe {
            index,
            analytic: analytic[index],
            numeric: central_difference(&mut work, index, step, loss),
        })
        .collect()
}

/// Worst relative error over a set of probes.
pub fn worst(probes: &[Probe], floor: f64) -> f64 {
    probes
        .iter()
        .map(|p| p.rel_error(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let mut f = |p: &[f64]| p[0].powi(3) + 2.0 * p[1];
        let probes = probe(&[2.0, 1.0], &[12.0, 2.0], &[0, 1], 1e-6, &mut f);
        assert!(worst(&probes, REL_FLOOR) < 1e-8);
    }
}
