use rand::Rng;

use super::{gemm, init_weight, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine map on `[N, in]` with weights `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: init_weight(&[d_out, d_in], rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dim(0)
    }

    fn rows(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.d_in() {
            return Err(Error::shape(&[0, self.d_in()], s));
        }
        Ok(s[0])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.rows(x)?;
        let (di, dout) = (self.d_in(), self.d_out());
        let mut y = Tensor::zeros(&[n, dout]);
        for r in 0..n {
            y.outer_mut(r).copy_from_slice(self.bias.data());
        }
        gemm(n, di, dout, x.data(), false, self.weight.data(), true, y.data_mut(), 1.0);
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Linear) -> Result<Tensor> {
        let n = self.rows(x)?;
        let (di, dout) = (self.d_in(), self.d_out());
        dy.expect_shape(&[n, dout])?;
        gemm(dout, n, di, dy.data(), true, x.data(), false, grad.weight.data_mut(), 1.0);
        let gb = grad.bias.data_mut();
        for r in 0..n {
            for (acc, g) in gb.iter_mut().zip(dy.outer(r)) {
                *acc += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, di]);
        gemm(n, dout, di, dy.data(), false, self.weight.data(), false, dx.data_mut(), 0.0);
        Ok(dx)
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
