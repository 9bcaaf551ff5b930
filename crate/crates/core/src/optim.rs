//! Adam with bias correction over any [`Params`] container.

use crate::nn::Params;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, param_count: usize) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: ADAM_EPS,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// Applies one update to `params` given gradients laid out like `params`.
    pub fn update<P: Params>(&mut self, params: &mut P, grad: &P) {
        let g = grad.flatten();
        assert_eq!(g.len(), self.m.len(), "optimizer state does not match parameters");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((m, v), &gi) in self.m.iter_mut().zip(self.v.iter_mut()).zip(&g) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (&self.m, &self.v);
        let mut off = 0;
        params.visit_mut(&mut |t| {
            for x in t.data_mut() {
                let mhat = m[off] / bc1;
                let vhat = v[off] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
                off += 1;
            }
        });
    }
}
