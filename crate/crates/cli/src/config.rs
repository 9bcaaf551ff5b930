use std::path::{Path, PathBuf};

use tavg_core::metrics::{ConvFeatureExtractor, FeatureExtractor, SsimParams};
use tavg_core::trainer::{parse_kv_lines, TrainConfig};
use tavg_core::Error;

use crate::error::{CliError, CliResult, Context};

pub const SEED_ENV: &str = "TAVG_SEED";

/// Training settings plus evaluation and logging settings, read from
/// `key = value` lines with `#` comments.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Seed for evaluation and generation noise.
    pub eval_seed: u64,
    /// Seed of the random feature stack used for LPIPS.
    pub lpips_seed: u64,
    /// Pretrained feature weights replacing the random stack.
    pub lpips_weights: Option<PathBuf>,
    /// SSIM window; 0 picks the largest standard window that fits.
    pub ssim_window: usize,
    pub grid_samples: usize,
    /// Progress line period in iterations; 0 disables progress output.
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            eval_seed: 0,
            lpips_seed: 0,
            lpips_weights: None,
            ssim_window: 0,
            grid_samples: 8,
            log_every: 100,
        }
    }
}

impl RunConfig {
    pub const EXTRA_KEYS: [&'static str; 6] = [
        "eval_seed",
        "lpips_seed",
        "lpips_weights",
        "ssim_window",
        "grid_samples",
        "log_every",
    ];

    pub fn from_kv(text: &str) -> tavg_core::Result<Self> {
        let mut c = RunConfig::default();
        for (line, key, value) in parse_kv_lines(text)? {
            if c.train.set(&key, &value)? {
                continue;
            }
            let bad = || Error::InvalidConfig(format!("line {line}: invalid value {value:?} for {key}"));
            match key.as_str() {
                "eval_seed" => c.eval_seed = value.parse().map_err(|_| bad())?,
                "lpips_seed" => c.lpips_seed = value.parse().map_err(|_| bad())?,
                "lpips_weights" => c.lpips_weights = (!value.is_empty()).then(|| PathBuf::from(&value)),
                "ssim_window" => c.ssim_window = value.parse().map_err(|_| bad())?,
                "grid_samples" => c.grid_samples = value.parse().map_err(|_| bad())?,
                "log_every" => c.log_every = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::InvalidConfig(format!("line {line}: unknown key {key:?}"))),
            }
        }
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_kv(&text).context(|| format!("config {}", path.display()))
    }

    pub fn to_kv(&self) -> String {
        let weights = self
            .lpips_weights
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        format!(
            "{}eval_seed = {}\nlpips_seed = {}\nlpips_weights = {}\nssim_window = {}\ngrid_samples = {}\nlog_every = {}\n",
            self.train.to_kv(),
            self.eval_seed,
            self.lpips_seed,
            weights,
            self.ssim_window,
            self.grid_samples,
            self.log_every
        )
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> CliResult<()> {
        if let Some(seed) = env_seed()? {
            self.train.seed = seed;
            self.eval_seed = seed;
        }
        Ok(())
    }

    pub fn ssim_params(&self, image_size: usize) -> SsimParams {
        match self.ssim_window {
            0 => SsimParams::fitted(image_size),
            w => SsimParams::with_window(w),
        }
    }

    pub fn extractor(&self) -> CliResult<Box<dyn FeatureExtractor>> {
        Ok(match &self.lpips_weights {
            Some(p) => Box::new(ConvFeatureExtractor::load(p).context(|| "loading LPIPS feature weights".into())?),
            None => Box::new(ConvFeatureExtractor::random(self.lpips_seed)),
        })
    }
}

/// Seed from `TAVG_SEED`, if present.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
