use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Windowed SSIM settings. The window is a normalized `window × window`
/// Gaussian; `dynamic_range` is the span of pixel values (2 for `[-1, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
        }
    }
}

impl SsimParams {
    pub fn with_window(window: usize) -> Self {
        SsimParams {
            window,
            ..Self::default()
        }
    }

    /// Default parameters with the window shrunk to the largest odd size
    /// that fits an `size`×`size` image.
    pub fn fitted(size: usize) -> Self {
        let d = Self::default();
        let window = if size >= d.window { d.window } else { size.saturating_sub(1 - size % 2).max(1) };
        SsimParams { window, ..d }
    }

    /// Row-major `window × window` weights summing to 1.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let mut k: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        let total: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= total);
        k
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) || !(self.dynamic_range > 0.0)
        {
            return Err(Error::InvalidConfig(format!("invalid SSIM parameters {self:?}")));
        }
        Ok(())
    }
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams, kernel: &[f64]) -> f64 {
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let k = p.window;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in 0..k {
                let row = (i + u) * w + j;
                for v in 0..k {
                    let g = kernel[u * k + v];
                    let (x, y) = (a[row + v], b[row + v]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * (x * y);
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (oh * ow) as f64
}

/// Mean SSIM over all valid window positions, averaged across channels.
/// Accepts `[H, W]` or `[C, H, W]` tensors.
pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    let (c, h, w) = match *a.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape(&[3, params.window, params.window], a.shape())),
    };
    if h < params.window || w < params.window {
        return Err(Error::ImageSmallerThanWindow {
            size: h.min(w),
            window: params.window,
        });
    }
    let kernel = params.kernel();
    let plane = h * w;
    let sum: f64 = (0..c)
        .map(|ch| {
            let r = ch * plane..(ch + 1) * plane;
            ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, params, &kernel)
        })
        .sum();
    Ok(sum / c as f64)
}
