use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::{lpips, mse, ssim, FeatureExtractor, SsimParams};
use crate::dataset::{frame_to_image, Dataset};
use crate::error::{Error, Result};
use crate::generator::NoiseVector;
use crate::par;
use crate::tensor::Tensor;
use crate::trainer::{derive_seed, noise_batch, TrainState};

const EVAL_NOISE_STREAM: u64 = 6;
pub const REPORT_HEADER: &str = "condition\tMSE\tSSIM\tLPIPS";

/// One row of the evaluation table. `temporal_mse` is the mean squared
/// change between consecutive generated frames (absent for single-frame
/// output).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub condition: String,
    pub mse: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub temporal_mse: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn row(&self, condition: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// Rows are conditions; columns are MSE, SSIM, LPIPS.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}", r.condition, r.mse, r.ssim, r.lpips);
        }
        out
    }

    /// Parses the three metric columns; sample counts and temporal values
    /// are not stored in the table.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidConfig(format!("report: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 columns in {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            rows.push(MetricRow {
                condition: f[0].to_string(),
                mse: num(f[1])?,
                ssim: num(f[2])?,
                lpips: num(f[3])?,
                temporal_mse: None,
                samples: 0,
            });
        }
        Ok(MetricReport { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// A named set of frames to score against a dataset's ground truth. A
/// condition without a model reproduces the ground truth itself.
#[derive(Debug, Clone, Copy)]
pub struct Condition<'a> {
    pub name: &'a str,
    pub model: Option<&'a TrainState>,
    pub dataset: &'a Dataset,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub seed: u64,
    pub ssim: SsimParams,
    pub grid_dir: Option<PathBuf>,
    pub grid_samples: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            ssim: SsimParams::default(),
            grid_dir: None,
            grid_samples: 8,
        }
    }
}

/// Noise for the sample with dataset index `index`.
pub fn eval_noise(seed: u64, index: usize, dim: usize) -> NoiseVector {
    let z = noise_batch(derive_seed(seed, EVAL_NOISE_STREAM), index as u64, 1, dim);
    NoiseVector::new(z.into_data()).expect("non-empty noise")
}

fn check_condition(c: &Condition) -> Result<()> {
    if c.dataset.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if let Some(state) = c.model {
        let expected = state.mode().dataset_mode();
        if expected != c.dataset.mode() {
            return Err(Error::ModeMismatch {
                expected: expected.to_string(),
                found: c.dataset.mode().to_string(),
            });
        }
        let size = state.models.generator.config.out_size;
        if size != c.dataset.image_size {
            return Err(Error::shape(&[3, size, size], &[3, c.dataset.image_size, c.dataset.image_size]));
        }
    }
    Ok(())
}

/// Frames for every sample in dataset order.
pub fn generate_condition(c: &Condition, seed: u64) -> Result<Vec<Vec<Tensor>>> {
    check_condition(c)?;
    let ds = c.dataset;
    match c.model {
        None => Ok((0..ds.len()).map(|i| ds.frames(i).to_vec()).collect()),
        Some(state) => {
            let dim = state.models.generator.config.noise_dim;
            par::map_indexed(ds.len(), |i| {
                state.models.generate(ds.audio(i), &eval_noise(seed, ds.index(i), dim))
            })
            .into_iter()
            .collect()
        }
    }
}

/// Sum in ascending order so the mean does not depend on sample order.
fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean per-frame metrics of `generated` against `dataset` ground truth.
pub fn score_frames(
    name: &str,
    generated: &[Vec<Tensor>],
    dataset: &Dataset,
    extractor: &dyn FeatureExtractor,
    params: &SsimParams,
) -> Result<MetricRow> {
    if generated.is_empty() || dataset.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if generated.len() != dataset.len() {
        return Err(Error::WrongInputLength {
            expected: dataset.len(),
            actual: generated.len(),
        });
    }
    let per_sample = par::map_indexed(generated.len(), |i| -> Result<Vec<[f64; 3]>> {
        let truth = dataset.frames(i);
        if truth.len() != generated[i].len() {
            return Err(Error::WrongInputLength {
                expected: truth.len(),
                actual: generated[i].len(),
            });
        }
        generated[i]
            .iter()
            .zip(truth)
            .map(|(g, t)| Ok([mse(g, t)?, ssim(g, t, params)?, lpips(g, t, extractor)?]))
            .collect()
    });
    let mut cols: [Vec<f64>; 3] = Default::default();
    let mut temporal = Vec::new();
    for (frames, scores) in generated.iter().zip(per_sample) {
        for s in scores? {
            for (c, v) in cols.iter_mut().zip(s) {
                c.push(v);
            }
        }
        if frames.len() > 1 {
            temporal.push(temporal_mse(frames)?);
        }
    }
    let [m, s, l] = cols;
    Ok(MetricRow {
        condition: name.to_string(),
        mse: sorted_mean(m),
        ssim: sorted_mean(s),
        lpips: sorted_mean(l),
        temporal_mse: (!temporal.is_empty()).then(|| sorted_mean(temporal)),
        samples: generated.len(),
    })
}

/// Mean MSE between consecutive frames.
pub fn temporal_mse(frames: &[Tensor]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::EmptySequence);
    }
    let diffs = frames.windows(2).map(|w| mse(&w[0], &w[1])).collect::<Result<Vec<_>>>()?;
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Scores every condition, one report row each, in the given order.
pub fn evaluate(
    conditions: &[Condition],
    extractor: &dyn FeatureExtractor,
    options: &EvalOptions,
) -> Result<MetricReport> {
    if conditions.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let mut rows = Vec::with_capacity(conditions.len());
    for c in conditions {
        let generated = generate_condition(c, options.seed)?;
        if let Some(dir) = &options.grid_dir {
            write_grid(dir, c.name, &generated, c.dataset, options.grid_samples)?;
        }
        rows.push(score_frames(c.name, &generated, c.dataset, extractor, &options.ssim)?);
    }
    Ok(MetricReport { rows })
}

/// Resolves requested condition names to checkpoint paths.
pub fn select_checkpoints<'a>(
    requested: &[&'a str],
    available: &BTreeMap<String, PathBuf>,
) -> Result<Vec<(&'a str, PathBuf)>> {
    requested
        .iter()
        .map(|&name| {
            available
                .get(name)
                .map(|p| (name, p.clone()))
                .ok_or_else(|| Error::MissingCheckpoint(name.to_string()))
        })
        .collect()
}

/// Writes `<dir>/<name>.png`: one row per sample, ground-truth frames on the
/// left and generated frames on the right.
pub fn write_grid(dir: &Path, name: &str, generated: &[Vec<Tensor>], dataset: &Dataset, samples: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = samples.min(generated.len());
    let s = dataset.image_size as u32;
    let per_row = generated.first().map_or(0, |g| g.len()) as u32 * 2;
    let mut grid = RgbImage::new((per_row * s).max(1), (rows as u32 * s).max(1));
    for (r, frames) in generated.iter().take(rows).enumerate() {
        let tiles = dataset.frames(r).iter().chain(frames);
        for (c, tile) in tiles.enumerate() {
            let img = frame_to_image(tile);
            image::imageops::replace(&mut grid, &img, (c as u32 * s) as i64, (r as u32 * s) as i64);
        }
    }
    let path = dir.join(format!("{name}.png"));
    grid.save(&path).map_err(|e| Error::Image(e.to_string()))?;
    Ok(path)
}
