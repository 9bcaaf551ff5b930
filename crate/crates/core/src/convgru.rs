//! Convolutional GRU cell.
//!
//! With `*` a same-padded convolution and `∘` the elementwise product:
//!
//! ```text
//! Z_t  = σ(W_xz * X_t + W_hz * H_{t-1})          update gate
//! R_t  = σ(W_xr * X_t + W_hr * H_{t-1})          reset gate
//! H'_t = f(W_xc * X_t + R_t ∘ (W_hc * H_{t-1}))  candidate
//! H_t  = (1 - Z_t) ∘ H'_t + Z_t ∘ H_{t-1}
//! ```
//!
//! The kernels are stored by role: `input_update` (W_xz), `hidden_update`
//! (W_hz), `input_reset` (W_xr), `hidden_reset` (W_hr), `input_candidate`
//! (W_xc) and `hidden_candidate` (W_hc). No convolution carries a bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{sigmoid_scalar, Conv2d, ConvGeom, Params};
use crate::tensor::Tensor;

/// Candidate-state activation `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruConfig {
    pub c_in: usize,
    pub c_h: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub activation: Activation,
}

impl GruConfig {
    pub fn new(c_in: usize, c_h: usize, height: usize, width: usize, kernel_size: usize) -> Self {
        GruConfig {
            c_in,
            c_h,
            height,
            width,
            kernel_size,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_h == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!(
                "gru dimensions must be positive: {self:?}"
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "gru kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        3 * self.kernel_size * self.kernel_size * self.c_h * (self.c_in + self.c_h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub config: GruConfig,
    pub input_update: Conv2d,
    pub hidden_update: Conv2d,
    pub input_reset: Conv2d,
    pub hidden_reset: Conv2d,
    pub input_candidate: Conv2d,
    pub hidden_candidate: Conv2d,
}

/// Draws every kernel from N(0, 0.02²).
pub fn init_gru(config: GruConfig, seed: u64) -> Result<GruWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GruWeights::new(config, &mut rng)
}

impl GruWeights {
    pub fn new<R: rand::Rng + ?Sized>(config: GruConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let g = ConvGeom::same(config.kernel_size);
        let (ci, ch) = (config.c_in, config.c_h);
        Ok(GruWeights {
            config,
            input_update: Conv2d::new(ci, ch, g, false, rng),
            hidden_update: Conv2d::new(ch, ch, g, false, rng),
            input_reset: Conv2d::new(ci, ch, g, false, rng),
            hidden_reset: Conv2d::new(ch, ch, g, false, rng),
            input_candidate: Conv2d::new(ci, ch, g, false, rng),
            hidden_candidate: Conv2d::new(ch, ch, g, false, rng),
        })
    }

    fn check(&self, x: &Tensor, h: &Tensor) -> Result<()> {
        let c = &self.config;
        let n = x.shape().first().copied().unwrap_or(0);
        x.expect_shape(&[n, c.c_in, c.height, c.width])?;
        h.expect_shape(&[n, c.c_h, c.height, c.width])
    }

    /// Zero hidden state for a batch of `n`.
    pub fn zero_state(&self, n: usize) -> Tensor {
        Tensor::zeros(&[n, self.config.c_h, self.config.height, self.config.width])
    }
}

impl Params for GruWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        for c in [
            &self.input_update,
            &self.hidden_update,
            &self.input_reset,
            &self.hidden_reset,
            &self.input_candidate,
            &self.hidden_candidate,
        ] {
            c.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for c in [
            &mut self.input_update,
            &mut self.hidden_update,
            &mut self.input_reset,
            &mut self.hidden_reset,
            &mut self.input_candidate,
            &mut self.hidden_candidate,
        ] {
            c.visit_mut(f);
        }
    }
}

/// Update gate, reset gate and candidate state of one step.
#[derive(Debug, Clone)]
pub struct Gates {
    pub update: Tensor,
    pub reset: Tensor,
    pub candidate: Tensor,
}

/// Everything a step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Tensor,
    h_prev: Tensor,
    gates: Gates,
    /// `W_hc * H_{t-1}`
    hidden_proj: Tensor,
}

fn sum2(a: Tensor, b: &Tensor) -> Tensor {
    let mut a = a;
    a.add_assign(b);
    a
}

fn gates_cached(x: &Tensor, h_prev: &Tensor, w: &GruWeights) -> Result<(Gates, Tensor)> {
    w.check(x, h_prev)?;
    let update = sum2(w.input_update.forward(x)?, &w.hidden_update.forward(h_prev)?)
        .map(sigmoid_scalar);
    let reset =
        sum2(w.input_reset.forward(x)?, &w.hidden_reset.forward(h_prev)?).map(sigmoid_scalar);
    let hidden_proj = w.hidden_candidate.forward(h_prev)?;
    let f = w.config.activation;
    let mut candidate = w.input_candidate.forward(x)?;
    for ((c, r), u) in candidate
        .data_mut()
        .iter_mut()
        .zip(reset.data())
        .zip(hidden_proj.data())
    {
        *c = f.apply(*c + r * u);
    }
    Ok((
        Gates {
            update,
            reset,
            candidate,
        },
        hidden_proj,
    ))
}

/// Computes `(Z_t, R_t, H'_t)` for a batch `[N, C, H, W]`.
pub fn gates(x: &Tensor, h_prev: &Tensor, w: &GruWeights) -> Result<Gates> {
    Ok(gates_cached(x, h_prev, w)?.0)
}

/// `H_t = (1 - Z) ∘ H' + Z ∘ H_{t-1}`.
pub fn blend(update: &Tensor, candidate: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    candidate.expect_shape(update.shape())?;
    h_prev.expect_shape(update.shape())?;
    let data = update
        .data()
        .iter()
        .zip(candidate.data())
        .zip(h_prev.data())
        .map(|((&z, &c), &h)| (1.0 - z) * c + z * h)
        .collect();
    Tensor::from_vec(update.shape(), data)
}

pub fn gru_step(x: &Tensor, h_prev: &Tensor, w: &GruWeights) -> Result<Tensor> {
    let g = gates(x, h_prev, w)?;
    blend(&g.update, &g.candidate, h_prev)
}

/// Step input for [`unroll`].
#[derive(Debug, Clone, Copy)]
pub enum StepInputs<'a> {
    Sequence(&'a [Tensor]),
    /// The same input at each of `steps` steps.
    Repeat(&'a Tensor, usize),
}

impl StepInputs<'_> {
    pub fn len(&self) -> usize {
        match self {
            StepInputs::Sequence(s) => s.len(),
            StepInputs::Repeat(_, t) => *t,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(&self, t: usize) -> &Tensor {
        match self {
            StepInputs::Sequence(s) => &s[t],
            StepInputs::Repeat(x, _) => x,
        }
    }
}

/// Returns `H_1..H_T`.
pub fn unroll(inputs: StepInputs<'_>, h0: &Tensor, w: &GruWeights) -> Result<Vec<Tensor>> {
    Ok(unroll_cached(inputs, h0, w)?.0)
}

pub fn step_forward(x: &Tensor, h_prev: &Tensor, w: &GruWeights) -> Result<(Tensor, StepCache)> {
    let (gates, hidden_proj) = gates_cached(x, h_prev, w)?;
    let h = blend(&gates.update, &gates.candidate, h_prev)?;
    Ok((
        h,
        StepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            gates,
            hidden_proj,
        },
    ))
}

pub fn unroll_cached(
    inputs: StepInputs<'_>,
    h0: &Tensor,
    w: &GruWeights,
) -> Result<(Vec<Tensor>, Vec<StepCache>)> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut outs = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    let mut h = h0.clone();
    for t in 0..inputs.len() {
        let (next, cache) = step_forward(inputs.at(t), &h, w)?;
        caches.push(cache);
        outs.push(next.clone());
        h = next;
    }
    Ok((outs, caches))
}

/// Backward through one step: returns `(dL/dX_t, dL/dH_{t-1})`.
pub fn step_backward(
    cache: &StepCache,
    dh: &Tensor,
    w: &GruWeights,
    grad: &mut GruWeights,
) -> Result<(Tensor, Tensor)> {
    let Gates {
        update: z,
        reset: r,
        candidate: c,
    } = &cache.gates;
    let f = w.config.activation;
    let n = dh.len();
    let mut d_az = vec![0.0; n];
    let mut d_ar = vec![0.0; n];
    let mut d_p = vec![0.0; n];
    let mut d_u = vec![0.0; n];
    let mut dh_prev = vec![0.0; n];
    let (zd, rd, cd, hd, ud, gd) = (
        z.data(),
        r.data(),
        c.data(),
        cache.h_prev.data(),
        cache.hidden_proj.data(),
        dh.data(),
    );
    for i in 0..n {
        let d_z = gd[i] * (hd[i] - cd[i]);
        let d_c = gd[i] * (1.0 - zd[i]);
        dh_prev[i] = gd[i] * zd[i];
        let dp = d_c * f.grad_from_output(cd[i]);
        d_p[i] = dp;
        d_u[i] = dp * rd[i];
        d_ar[i] = dp * ud[i] * rd[i] * (1.0 - rd[i]);
        d_az[i] = d_z * zd[i] * (1.0 - zd[i]);
    }
    let shape = dh.shape();
    let d_az = Tensor::from_vec(shape, d_az)?;
    let d_ar = Tensor::from_vec(shape, d_ar)?;
    let d_p = Tensor::from_vec(shape, d_p)?;
    let d_u = Tensor::from_vec(shape, d_u)?;
    let mut dh_prev = Tensor::from_vec(shape, dh_prev)?;

    let x = &cache.x;
    let hp = &cache.h_prev;
    let mut dx = w.input_update.backward(x, &d_az, &mut grad.input_update)?;
    dx.add_assign(&w.input_reset.backward(x, &d_ar, &mut grad.input_reset)?);
    dx.add_assign(&w.input_candidate.backward(x, &d_p, &mut grad.input_candidate)?);
    dh_prev.add_assign(&w.hidden_update.backward(hp, &d_az, &mut grad.hidden_update)?);
    dh_prev.add_assign(&w.hidden_reset.backward(hp, &d_ar, &mut grad.hidden_reset)?);
    dh_prev.add_assign(&w.hidden_candidate.backward(hp, &d_u, &mut grad.hidden_candidate)?);
    Ok((dx, dh_prev))
}

/// Backpropagation through time.
///
/// `d_outputs[t]` is the gradient arriving at `H_{t+1}` from outside the
/// recurrence; `None` entries are treated as zero. Returns the per-step input
/// gradients and the gradient at `H_0`.
pub fn unroll_backward(
    caches: &[StepCache],
    d_outputs: &[Option<Tensor>],
    w: &GruWeights,
    grad: &mut GruWeights,
) -> Result<(Vec<Tensor>, Tensor)> {
    if caches.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut carry = caches[0].h_prev.zeros_like();
    let mut dxs = vec![Tensor::zeros(&[0]); caches.len()];
    for t in (0..caches.len()).rev() {
        let mut dh = carry;
        if let Some(d) = d_outputs.get(t).and_then(|d| d.as_ref()) {
            dh.add_assign(d);
        }
        let (dx, dprev) = step_backward(&caches[t], &dh, w, grad)?;
        dxs[t] = dx;
        carry = dprev;
    }
    Ok((dxs, carry))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_weights(c_in: usize, c_h: usize, hw: usize, k: usize) -> GruWeights {
        let mut w = init_gru(GruConfig::new(c_in, c_h, hw, hw, k), 0).unwrap();
        w.visit_mut(&mut |t| t.fill(0.0));
        w
    }

    #[test]
    fn zero_weights_give_half_gates() {
        let w = zero_weights(2, 3, 4, 3);
        let x = Tensor::full(&[1, 2, 4, 4], 0.7);
        let h = Tensor::full(&[1, 3, 4, 4], -0.3);
        let g = gates(&x, &h, &w).unwrap();
        assert!(g.update.data().iter().all(|&v| v == 0.5));
        assert!(g.reset.data().iter().all(|&v| v == 0.5));
        assert!(g.candidate.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blend_laws() {
        let c = Tensor::from_vec(&[1, 1, 1, 2], vec![0.8, -0.2]).unwrap();
        let h = Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, 0.9]).unwrap();
        let ones = Tensor::full(&[1, 1, 1, 2], 1.0);
        let zeros = Tensor::zeros(&[1, 1, 1, 2]);
        assert_eq!(blend(&ones, &c, &h).unwrap(), h);
        assert_eq!(blend(&zeros, &c, &h).unwrap(), c);
        let quarter = Tensor::full(&[1, 1, 1, 1], 0.25);
        let out = blend(
            &quarter,
            &Tensor::full(&[1, 1, 1, 1], 0.8),
            &Tensor::zeros(&[1, 1, 1, 1]),
        )
        .unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_step() {
        let w = zero_weights(1, 1, 1, 1);
        let x = Tensor::full(&[1, 1, 1, 1], 0.3);
        let h = gru_step(&x, &Tensor::full(&[1, 1, 1, 1], 1.0), &w).unwrap();
        assert_eq!(h.data(), &[0.5]);
        let h = gru_step(&x, &Tensor::zeros(&[1, 1, 1, 1]), &w).unwrap();
        assert_eq!(h.data(), &[0.0]);
    }

    #[test]
    fn degenerate_shape_has_scalar_kernels() {
        let w = init_gru(GruConfig::new(1, 1, 1, 1, 1), 9).unwrap();
        let mut shapes = vec![];
        w.visit(&mut |t| shapes.push(t.shape().to_vec()));
        assert_eq!(shapes, vec![vec![1, 1, 1, 1]; 6]);
    }

    #[test]
    fn rejects_even_kernel_and_empty_sequence() {
        assert!(init_gru(GruConfig::new(1, 1, 2, 2, 2), 0).is_err());
        let w = zero_weights(1, 1, 2, 1);
        let h0 = w.zero_state(1);
        assert!(matches!(
            unroll(StepInputs::Sequence(&[]), &h0, &w),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = zero_weights(2, 3, 4, 3);
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let h = Tensor::zeros(&[1, 3, 4, 4]);
        assert!(matches!(gates(&x, &h, &w), Err(Error::ShapeMismatch { .. })));
    }
}
