//! Layers with hand-written backward passes.
//!
//! Every layer is a plain struct of [`Tensor`]s. A gradient buffer for a layer
//! is a zeroed clone of that layer ([`Params::zeroed`]), so optimizers,
//! checkpoints and gradient checks can treat weights and gradients uniformly.

mod act;
mod conv;
mod linear;
mod norm;

pub use act::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, tanh,
    tanh_backward,
};
pub use conv::{Conv1d, Conv2d, ConvGeom, ConvTranspose2d};
pub use linear::Linear;
pub use norm::{BatchNorm, BnCache};

use rand::Rng;

use crate::tensor::Tensor;

/// Standard deviation used for every weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Whether batch normalization uses batch statistics or running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

pub trait Params {
    /// Visits trainable tensors in a fixed order.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    /// Non-trainable state (batch-norm running statistics).
    fn visit_buffers<'a>(&'a self, _f: &mut dyn FnMut(&'a Tensor)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&mut Tensor)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    /// A clone with every trainable tensor set to zero.
    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut(&mut |t| t.fill(0.0));
        z
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |t| out.extend_from_slice(t.data()));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
    }

    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut(&mut |t| {
            for x in t.data_mut() {
                *x += scale * flat[off];
                off += 1;
            }
        });
    }
}

pub(crate) fn init_weight<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::randn(shape, INIT_STD, rng)
}

/// `C = alpha * A·B + beta * C` on row-major slices; `ta`/`tb` read the
/// operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds are checked above; strides describe the row-major
    // layout of each slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<T: Params> Params for Vec<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.iter().for_each(|p| p.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.iter_mut().for_each(|p| p.visit_mut(f));
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.iter().for_each(|p| p.visit_buffers(f));
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.iter_mut().for_each(|p| p.visit_buffers_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1., 2., 3., 4.];
        let b = [5., 6., 7., 8.];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19., 22., 43., 50.]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26., 30., 38., 44.]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17., 23., 39., 53.]);
    }
}
