use super::{Params, Phase};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `[N, C, ...]`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`
/// and use the unbiased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    phase: Phase,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    count: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.9,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels() {
            return Err(Error::shape(&[0, self.channels()], s));
        }
        let spatial: usize = s[2..].iter().product();
        Ok((s[0], s[1], spatial))
    }

    /// In [`Phase::Train`] normalizes with batch statistics; the running
    /// averages only move when the cache is passed to [`BatchNorm::commit`].
    pub fn forward(&self, x: &Tensor, phase: Phase) -> Result<(Tensor, BnCache)> {
        let (n, c, sp) = self.layout(x)?;
        let m = (n * sp) as f64;
        let (mean, var) = match phase {
            Phase::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for s in 0..n {
                    let row = x.outer(s);
                    for ch in 0..c {
                        mean[ch] += row[ch * sp..(ch + 1) * sp].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for s in 0..n {
                    let row = x.outer(s);
                    for ch in 0..c {
                        var[ch] += row[ch * sp..(ch + 1) * sp]
                            .iter()
                            .map(|v| (v - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var)
            }
            Phase::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for s in 0..n {
            let xr = xhat.outer_mut(s);
            for ch in 0..c {
                for v in &mut xr[ch * sp..(ch + 1) * sp] {
                    *v = (*v - mean[ch]) * inv_std[ch];
                }
            }
            let yr = y.outer_mut(s);
            yr.copy_from_slice(xr);
            for ch in 0..c {
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                for v in &mut yr[ch * sp..(ch + 1) * sp] {
                    *v = g * *v + b;
                }
            }
        }
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                phase,
                batch_mean: mean,
                batch_var: var,
                count: n * sp,
            },
        ))
    }

    /// Folds the batch statistics of a training-phase forward pass into the
    /// running averages.
    pub fn commit(&mut self, cache: &BnCache) {
        if cache.phase != Phase::Train {
            return;
        }
        let m = cache.count as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let k = self.momentum;
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = k * *rm + (1.0 - k) * cache.batch_mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = k * *rv + (1.0 - k) * cache.batch_var[ch] * unbias;
        }
    }

    pub fn backward(&self, cache: &BnCache, dy: &Tensor, grad: &mut BatchNorm) -> Result<Tensor> {
        let (n, c, sp) = self.layout(dy)?;
        let m = (n * sp) as f64;
        let xhat = &cache.xhat;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for s in 0..n {
            let (d, xh) = (dy.outer(s), xhat.outer(s));
            for ch in 0..c {
                for i in ch * sp..(ch + 1) * sp {
                    sum_dy[ch] += d[i];
                    sum_dy_xhat[ch] += d[i] * xh[i];
                }
            }
        }
        for ch in 0..c {
            grad.gamma.data_mut()[ch] += sum_dy_xhat[ch];
            grad.beta.data_mut()[ch] += sum_dy[ch];
        }
        let mut dx = dy.clone();
        for s in 0..n {
            let xh = xhat.outer(s);
            let dxr = dx.outer_mut(s);
            for ch in 0..c {
                let g = self.gamma.data()[ch];
                let is = cache.inv_std[ch];
                for i in ch * sp..(ch + 1) * sp {
                    dxr[i] = match cache.phase {
                        Phase::Train => {
                            g * is * (dxr[i] - sum_dy[ch] / m - xh[i] * sum_dy_xhat[ch] / m)
                        }
                        Phase::Eval => g * is * dxr[i],
                    };
                }
            }
        }
        Ok(dx)
    }
}

impl Params for BatchNorm {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
