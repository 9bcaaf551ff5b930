//! Frame quality metrics and condition-level evaluation reports.

mod eval;
mod lpips;
mod ssim;

pub use eval::{
    eval_noise, generate_condition, select_checkpoints,
    evaluate, score_frames, temporal_mse, write_grid, Condition, EvalOptions, MetricReport, MetricRow, REPORT_HEADER,
};
pub use lpips::{lpips, ConvFeatureExtractor, FeatureExtractor, FeatureLayer, EXTRACTOR_MAGIC};
pub use ssim::{ssim, SsimParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean of `(a - b)^2` over every element.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(Error::shape(&[1], &[0]));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}
