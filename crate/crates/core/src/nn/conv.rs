use rand::Rng;

use super::{gemm, init_weight, Params};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Upper bound (in elements) on the unfolded column buffer built when
/// accumulating weight gradients over a group of samples.
const CHUNK_ELEMS: usize = 1 << 22;

/// Kernel extent, stride and zero padding along each spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
            ph: pad,
            pw: pad,
        }
    }

    /// Square kernel with same padding at stride 1 (odd `k`).
    pub fn same(k: usize) -> Self {
        Self::square(k, 1, k / 2)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let eh = h + 2 * self.ph;
        let ew = w + 2 * self.pw;
        if eh < self.kh || ew < self.kw {
            return Err(Error::shape(&[self.kh, self.kw], &[eh, ew]));
        }
        Ok(((eh - self.kh) / self.sh + 1, (ew - self.kw) / self.sw + 1))
    }

    pub fn transposed_out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.sh + self.kh - 2 * self.ph,
            (w - 1) * self.sw + self.kw - 2 * self.pw,
        )
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }
}

/// Unfolds one `[c, h, w]` image into a `[c*kh*kw, ho*wo]` column matrix whose
/// rows are `row_stride` apart.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    ho: usize,
    wo: usize,
    out: &mut [f64],
    row_stride: usize,
) {
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut out[row * row_stride..row * row_stride + ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[c, h, w]`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.sw + kx) as isize - g.pw as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Splits `n` samples into consecutive groups whose unfolded columns stay
/// under [`CHUNK_ELEMS`].
fn sample_groups(n: usize, per_sample: usize) -> Vec<std::ops::Range<usize>> {
    let step = (CHUNK_ELEMS / per_sample.max(1)).max(1);
    (0..n)
        .step_by(step)
        .map(|s| s..(s + step).min(n))
        .collect()
}

/// Copies `[len]` blocks of each sample in `range` side by side:
/// result is `[rows, range.len() * cols]`.
fn gather_rows(t: &Tensor, range: std::ops::Range<usize>, rows: usize, cols: usize) -> Vec<f64> {
    let n = range.len();
    let mut out = vec![0.0; rows * n * cols];
    for (j, s) in range.enumerate() {
        let src = t.outer(s);
        for r in 0..rows {
            out[r * n * cols + j * cols..r * n * cols + (j + 1) * cols]
                .copy_from_slice(&src[r * cols..(r + 1) * cols]);
        }
    }
    out
}

/// Unfolds every sample of `x[range]` into one `[c*kk, n*ho*wo]` buffer.
#[allow(clippy::too_many_arguments)]
fn unfold_group(
    x: &Tensor,
    range: std::ops::Range<usize>,
    c: usize,
    h: usize,
    w: usize,
    g: &ConvGeom,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let n = range.len();
    let rows = c * g.taps();
    let hw = ho * wo;
    let per: Vec<Vec<f64>> = par::map_indexed(n, |j| {
        let mut cols = vec![0.0; rows * hw];
        im2col(x.outer(range.start + j), c, h, w, g, ho, wo, &mut cols, hw);
        cols
    });
    let mut out = vec![0.0; rows * n * hw];
    for (j, cols) in per.iter().enumerate() {
        for r in 0..rows {
            out[r * n * hw + j * hw..r * n * hw + (j + 1) * hw]
                .copy_from_slice(&cols[r * hw..(r + 1) * hw]);
        }
    }
    out
}

fn check_input(x: &Tensor, c: usize) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 || s[1] != c {
        return Err(Error::shape(&[0, c, 0, 0], s));
    }
    Ok((s[0], s[2], s[3]))
}

fn join_samples(n: usize, per: Vec<Vec<f64>>, shape: [usize; 3]) -> Tensor {
    let mut data = Vec::with_capacity(n * shape.iter().product::<usize>());
    for p in per {
        data.extend(p);
    }
    Tensor::from_vec(&[n, shape[0], shape[1], shape[2]], data).expect("sample sizes are uniform")
}

/// 2-D convolution over `[N, C_in, H, W]` with weights `[C_out, C_in, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: init_weight(&[c_out, c_in, geom.kh, geom.kw], rng),
            bias: bias.then(|| Tensor::zeros(&[c_out])),
            geom,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w) = check_input(x, self.c_in())?;
        let g = self.geom;
        let (ho, wo) = g.out_hw(h, w)?;
        let (co, ci) = (self.c_out(), self.c_in());
        let rows = ci * g.taps();
        let hw = ho * wo;
        let per = par::map_indexed(n, |s| {
            let mut cols = vec![0.0; rows * hw];
            im2col(x.outer(s), ci, h, w, &g, ho, wo, &mut cols, hw);
            let mut out = vec![0.0; co * hw];
            if let Some(b) = &self.bias {
                for (o, &bv) in b.data().iter().enumerate() {
                    out[o * hw..(o + 1) * hw].fill(bv);
                }
            }
            let beta = if self.bias.is_some() { 1.0 } else { 0.0 };
            gemm(co, rows, hw, self.weight.data(), false, &cols, false, &mut out, beta);
            out
        });
        Ok(join_samples(n, per, [co, ho, wo]))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Conv2d) -> Result<Tensor> {
        let (n, h, w) = check_input(x, self.c_in())?;
        let g = self.geom;
        let (ho, wo) = g.out_hw(h, w)?;
        let (co, ci) = (self.c_out(), self.c_in());
        dy.expect_shape(&[n, co, ho, wo])?;
        let rows = ci * g.taps();
        let hw = ho * wo;

        let per = par::map_indexed(n, |s| {
            let mut dcols = vec![0.0; rows * hw];
            gemm(rows, co, hw, self.weight.data(), true, dy.outer(s), false, &mut dcols, 0.0);
            let mut dx = vec![0.0; ci * h * w];
            col2im(&dcols, ci, h, w, &g, ho, wo, &mut dx);
            dx
        });

        for range in sample_groups(n, rows * hw) {
            let m = range.len();
            let cols = unfold_group(x, range.clone(), ci, h, w, &g, ho, wo);
            let dyg = gather_rows(dy, range, co, hw);
            gemm(co, m * hw, rows, &dyg, false, &cols, true, grad.weight.data_mut(), 1.0);
        }
        if let Some(gb) = &mut grad.bias {
            let gb = gb.data_mut();
            for s in 0..n {
                let d = dy.outer(s);
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += d[o * hw..(o + 1) * hw].iter().sum::<f64>();
                }
            }
        }
        Ok(join_samples(n, per, [ci, h, w]))
    }
}

impl Params for Conv2d {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Transposed 2-D convolution with weights `[C_in, C_out, kh, kw]`; the
/// adjoint of [`Conv2d`] with the same geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        ConvTranspose2d {
            weight: init_weight(&[c_in, c_out, geom.kh, geom.kw], rng),
            bias: bias.then(|| Tensor::zeros(&[c_out])),
            geom,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn c_out(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w) = check_input(x, self.c_in())?;
        let g = self.geom;
        let (ho, wo) = g.transposed_out_hw(h, w);
        let (ci, co) = (self.c_in(), self.c_out());
        let rows = co * g.taps();
        let hw = h * w;
        let per = par::map_indexed(n, |s| {
            let mut cols = vec![0.0; rows * hw];
            gemm(rows, ci, hw, self.weight.data(), true, x.outer(s), false, &mut cols, 0.0);
            let mut out = vec![0.0; co * ho * wo];
            col2im(&cols, co, ho, wo, &g, h, w, &mut out);
            if let Some(b) = &self.bias {
                for (o, &bv) in b.data().iter().enumerate() {
                    out[o * ho * wo..(o + 1) * ho * wo]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
            out
        });
        Ok(join_samples(n, per, [co, ho, wo]))
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut ConvTranspose2d) -> Result<Tensor> {
        let (n, h, w) = check_input(x, self.c_in())?;
        let g = self.geom;
        let (ho, wo) = g.transposed_out_hw(h, w);
        let (ci, co) = (self.c_in(), self.c_out());
        dy.expect_shape(&[n, co, ho, wo])?;
        let rows = co * g.taps();
        let hw = h * w;

        let per = par::map_indexed(n, |s| {
            let mut cols = vec![0.0; rows * hw];
            im2col(dy.outer(s), co, ho, wo, &g, h, w, &mut cols, hw);
            let mut dx = vec![0.0; ci * hw];
            gemm(ci, rows, hw, self.weight.data(), false, &cols, false, &mut dx, 0.0);
            dx
        });

        for range in sample_groups(n, rows * hw) {
            let m = range.len();
            let cols = unfold_group(dy, range.clone(), co, ho, wo, &g, h, w);
            let xg = gather_rows(x, range, ci, hw);
            gemm(ci, m * hw, rows, &xg, false, &cols, true, grad.weight.data_mut(), 1.0);
        }
        if let Some(gb) = &mut grad.bias {
            let gb = gb.data_mut();
            let plane = ho * wo;
            for s in 0..n {
                let d = dy.outer(s);
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += d[o * plane..(o + 1) * plane].iter().sum::<f64>();
                }
            }
        }
        Ok(join_samples(n, per, [ci, h, w]))
    }
}

impl Params for ConvTranspose2d {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// 1-D convolution over `[N, C, L]`, implemented as a height-1 [`Conv2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub inner: Conv2d,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let geom = ConvGeom {
            kh: 1,
            kw: kernel,
            sh: 1,
            sw: stride,
            ph: 0,
            pw: pad,
        };
        Conv1d {
            inner: Conv2d::new(c_in, c_out, geom, true, rng),
        }
    }

    pub fn out_len(&self, len: usize) -> Result<usize> {
        Ok(self.inner.geom.out_hw(1, len)?.1)
    }

    fn lift(x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::shape(&[0, 0, 0], s));
        }
        x.clone().reshape(&[s[0], s[1], 1, s[2]])
    }

    fn lower(x: Tensor) -> Result<Tensor> {
        let s = x.shape().to_vec();
        x.reshape(&[s[0], s[1], s[3]])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Self::lower(self.inner.forward(&Self::lift(x)?)?)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut Conv1d) -> Result<Tensor> {
        let dx = self
            .inner
            .backward(&Self::lift(x)?, &Self::lift(dy)?, &mut grad.inner)?;
        Self::lower(dx)
    }
}

impl Params for Conv1d {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.inner.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.inner.visit_mut(f)
    }
}
