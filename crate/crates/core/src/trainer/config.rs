use std::fmt;
use std::str::FromStr;

use crate::dataset::DatasetMode;
use crate::discriminator::DiscriminatorConfig;
use crate::encoder::{EncoderConfig, SEGMENT_LEN};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorMode, NOISE_DIM};

/// Which of the three compared systems is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    WithGru,
    NoGru,
    Baseline,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::Baseline, TrainMode::NoGru, TrainMode::WithGru];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::WithGru => "with_gru",
            TrainMode::NoGru => "no_gru",
            TrainMode::Baseline => "baseline",
        }
    }

    pub fn generator_mode(self) -> GeneratorMode {
        match self {
            TrainMode::WithGru => GeneratorMode::WithGru,
            TrainMode::NoGru => GeneratorMode::NoGru,
            TrainMode::Baseline => GeneratorMode::SingleFrame,
        }
    }

    pub fn dataset_mode(self) -> DatasetMode {
        match self {
            TrainMode::Baseline => DatasetMode::Baseline,
            _ => DatasetMode::Triplet,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_gru" => Ok(TrainMode::WithGru),
            "no_gru" => Ok(TrainMode::NoGru),
            "baseline" => Ok(TrainMode::Baseline),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode {other:?} (expected with_gru, no_gru or baseline)"
            ))),
        }
    }
}

/// Network sizes shared by the three models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub noise_dim: usize,
    pub gen_base_channels: usize,
    pub disc_base_channels: usize,
    pub disc_gru_channels: usize,
    pub gru_kernel: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            noise_dim: NOISE_DIM,
            gen_base_channels: 64,
            disc_base_channels: 64,
            disc_gru_channels: 64,
            gru_kernel: 3,
            encoder_channels: vec![32, 64, 64, 128, 128],
            encoder_kernel: 15,
            encoder_stride: 4,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self, mode: TrainMode) -> EncoderConfig {
        let c = EncoderConfig::with_channels(
            &self.encoder_channels,
            self.encoder_kernel,
            self.encoder_stride,
            SEGMENT_LEN,
        );
        match mode {
            TrainMode::Baseline => c.to_baseline(),
            _ => c,
        }
    }

    pub fn generator(&self, mode: TrainMode) -> GeneratorConfig {
        GeneratorConfig {
            mode: mode.generator_mode(),
            noise_dim: self.noise_dim,
            base_channels: self.gen_base_channels,
            out_size: self.image_size,
            gru_kernel: self.gru_kernel,
            ..GeneratorConfig::default()
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_size: self.image_size,
            base_channels: self.disc_base_channels,
            gru_channels: self.disc_gru_channels,
            gru_kernel: self.gru_kernel,
            ..DiscriminatorConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Checkpoint interval in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::WithGru,
            lr_d: 1e-4,
            lr_g: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            iterations: 1000,
            seed: 0,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Returns
/// `(line number, key, value)` triples.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = vec![];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub const KEYS: [&'static str; 18] = [
        "mode",
        "lr_d",
        "lr_g",
        "beta1",
        "beta2",
        "batch_size",
        "iterations",
        "seed",
        "checkpoint_every",
        "image_size",
        "noise_dim",
        "gen_base_channels",
        "disc_base_channels",
        "disc_gru_channels",
        "gru_kernel",
        "encoder_channels",
        "encoder_kernel",
        "encoder_stride",
    ];

    /// Sets one field from its text form. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let m = &mut self.model;
        match key {
            "mode" => self.mode = value.parse()?,
            "lr_d" => self.lr_d = parse(key, value)?,
            "lr_g" => self.lr_g = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "image_size" => m.image_size = parse(key, value)?,
            "noise_dim" => m.noise_dim = parse(key, value)?,
            "gen_base_channels" => m.gen_base_channels = parse(key, value)?,
            "disc_base_channels" => m.disc_base_channels = parse(key, value)?,
            "disc_gru_channels" => m.disc_gru_channels = parse(key, value)?,
            "gru_kernel" => m.gru_kernel = parse(key, value)?,
            "encoder_channels" => m.encoder_channels = parse_list(key, value)?,
            "encoder_kernel" => m.encoder_kernel = parse(key, value)?,
            "encoder_stride" => m.encoder_stride = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a full config; every key must be known.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (line, k, v) in parse_kv_lines(text)? {
            if !c.set(&k, &v)? {
                return Err(Error::InvalidConfig(format!("line {line}: unknown key {k:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let channels: Vec<String> = m.encoder_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "mode = {}\nlr_d = {:?}\nlr_g = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nbatch_size = {}\niterations = {}\nseed = {}\ncheckpoint_every = {}\nimage_size = {}\nnoise_dim = {}\ngen_base_channels = {}\ndisc_base_channels = {}\ndisc_gru_channels = {}\ngru_kernel = {}\nencoder_channels = {}\nencoder_kernel = {}\nencoder_stride = {}\n",
            self.mode,
            self.lr_d,
            self.lr_g,
            self.beta1,
            self.beta2,
            self.batch_size,
            self.iterations,
            self.seed,
            self.checkpoint_every,
            m.image_size,
            m.noise_dim,
            m.gen_base_channels,
            m.disc_base_channels,
            m.disc_gru_channels,
            m.gru_kernel,
            channels.join(","),
            m.encoder_kernel,
            m.encoder_stride,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_d", self.lr_d)?;
        positive("lr_g", self.lr_g)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.model.encoder_channels.is_empty() {
            return Err(Error::InvalidConfig("encoder_channels must not be empty".into()));
        }
        self.model.encoder(self.mode).validate()?;
        self.model.generator(self.mode).validate()?;
        self.model.discriminator().validate()
    }
}
