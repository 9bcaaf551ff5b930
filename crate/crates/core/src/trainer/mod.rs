//! Adversarial training of encoder, generator and temporal discriminator.
//!
//! Each iteration draws a minibatch, generates fakes once, takes one
//! discriminator step on real triplets and detached fakes, then one
//! generator step through the freshly updated discriminator. The encoder is
//! trained only through the generator's condition input.

mod checkpoint;
mod config;
mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use config::{parse_kv_lines, ModelConfig, TrainConfig, TrainMode};
pub use loss::{d_loss, d_loss_logit_grads, g_loss, g_loss_logit_grads, PROB_CLAMP};

use crate::dataset::Dataset;
use crate::discriminator::{init_discriminator, DiscriminatorWeights};
use crate::encoder::{encode, init_encoder, EncoderCache, EncoderWeights};
use crate::error::{Error, Result};
use crate::generator::{generate, init_generator, GeneratorCache, GeneratorWeights, NoiseVector, FRAMES_PER_SAMPLE};
use crate::nn::{Params, Phase};
use crate::optim::Adam;
use crate::tensor::Tensor;

const ENCODER_STREAM: u64 = 1;
const GENERATOR_STREAM: u64 = 2;
const DISCRIMINATOR_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;
const NOISE_STREAM: u64 = 5;

/// Deterministic sub-seed for an independent random stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined value.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal noise `[n, dim]` for iteration `iteration`.
pub fn noise_batch(seed: u64, iteration: u64, n: usize, dim: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));
    rng.set_stream(iteration);
    let data = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::from_vec(&[n, dim], data).expect("sized above")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub encoder: EncoderWeights,
    pub generator: GeneratorWeights,
    pub discriminator: DiscriminatorWeights,
}

impl Models {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        Ok(Models {
            encoder: init_encoder(&m.encoder(config.mode), derive_seed(config.seed, ENCODER_STREAM))?,
            generator: init_generator(&m.generator(config.mode), derive_seed(config.seed, GENERATOR_STREAM))?,
            discriminator: init_discriminator(&m.discriminator(), derive_seed(config.seed, DISCRIMINATOR_STREAM))?,
        })
    }

    /// Inference for one normalized audio window: frames `[3, S, S]`.
    pub fn generate(&self, audio: &[f32], z: &NoiseVector) -> Result<Vec<Tensor>> {
        let y = encode(audio, &self.encoder)?;
        generate(z, &y, &self.generator)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub encoder: Adam,
    pub generator: Adam,
    pub discriminator: Adam,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub models: Models,
    pub optimizers: Optimizers,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let models = Models::init(&config)?;
        let optimizers = Optimizers {
            encoder: Adam::new(config.lr_g, config.beta1, config.beta2, models.encoder.param_count()),
            generator: Adam::new(config.lr_g, config.beta1, config.beta2, models.generator.param_count()),
            discriminator: Adam::new(
                config.lr_d,
                config.beta1,
                config.beta2,
                models.discriminator.param_count(),
            ),
        };
        Ok(TrainState {
            config,
            models,
            optimizers,
            iteration: 0,
        })
    }

    pub fn mode(&self) -> TrainMode {
        self.config.mode
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        self.d_loss.is_finite()
            && self.g_loss.is_finite()
            && self.d_real_mean.is_finite()
            && self.d_fake_mean.is_finite()
    }

    pub const TSV_HEADER: &'static str = "iteration\td_loss\tg_loss\td_real_mean\td_fake_mean";

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.iteration, self.d_loss, self.g_loss, self.d_real_mean, self.d_fake_mean
        )
    }
}

/// A stacked minibatch: audio `[B, L]` and the real frames as
/// `FRAMES_PER_SAMPLE` tensors `[B, 3, S, S]` in time order. Single-frame
/// samples are repeated to fill the three positions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub audio: Tensor,
    pub frames: Vec<Tensor>,
}

impl Batch {
    pub fn from_dataset(dataset: &Dataset, positions: &[usize]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let len = dataset.audio(positions[0]).len();
        let mut audio = Vec::with_capacity(positions.len() * len);
        for &p in positions {
            audio.extend(dataset.audio(p).iter().map(|&v| v as f64));
        }
        let audio = Tensor::from_vec(&[positions.len(), len], audio)?;
        let s = dataset.image_size;
        let frames = (0..FRAMES_PER_SAMPLE)
            .map(|t| {
                let parts: Vec<Tensor> = positions
                    .iter()
                    .map(|&p| {
                        let fs = dataset.frames(p);
                        fs[t.min(fs.len() - 1)].clone().reshape(&[1, 3, s, s])
                    })
                    .collect::<Result<_>>()?;
                let refs: Vec<&Tensor> = parts.iter().collect();
                Ok(Tensor::stack_outer(&refs))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch { audio, frames })
    }

    pub fn len(&self) -> usize {
        self.audio.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Forward results shared by the two phases of one step.
pub struct Prepared {
    pub y: Tensor,
    pub fakes: Vec<Tensor>,
    enc_cache: EncoderCache,
    gen_cache: GeneratorCache,
}

/// Expands generator output to the three frames the discriminator scores.
fn to_triplet(frames: &[Tensor]) -> Vec<Tensor> {
    (0..FRAMES_PER_SAMPLE)
        .map(|t| frames[t.min(frames.len() - 1)].clone())
        .collect()
}

/// Folds gradients for the repeated positions back onto the generator's frames.
fn from_triplet(d: Vec<Tensor>, frames: usize) -> Vec<Tensor> {
    if frames == d.len() {
        return d;
    }
    let mut out: Vec<Tensor> = d[..frames].to_vec();
    for g in d.iter().skip(frames) {
        out[frames - 1].add_assign(g);
    }
    out
}

/// Discriminator-phase outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorStep {
    pub loss: f64,
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl DiscriminatorStep {
    pub fn real_mean(&self) -> f64 {
        mean(&self.real_scores)
    }

    pub fn fake_mean(&self) -> f64 {
        mean(&self.fake_scores)
    }

    /// Fraction of scores on the correct side of 0.5.
    pub fn accuracy(&self) -> f64 {
        let right = self.real_scores.iter().filter(|&&p| p > 0.5).count()
            + self.fake_scores.iter().filter(|&&p| p < 0.5).count();
        right as f64 / (self.real_scores.len() + self.fake_scores.len()) as f64
    }
}

impl TrainState {
    /// Encodes the audio and generates fakes with the current weights.
    pub fn prepare(&self, batch: &Batch) -> Result<Prepared> {
        let (y, enc_cache) = self.models.encoder.forward(&batch.audio)?;
        let z = noise_batch(self.config.seed, self.iteration, batch.len(), self.config.model.noise_dim);
        let (fakes, gen_cache) = self.models.generator.forward(&z, &y, Phase::Train)?;
        Ok(Prepared {
            y,
            fakes,
            enc_cache,
            gen_cache,
        })
    }

    /// One discriminator update on real frames and detached fakes, both
    /// conditioned on `y`. Touches only the discriminator and its optimizer.
    pub fn discriminator_step(&mut self, real: &[Tensor], fakes: &[Tensor], y: &Tensor) -> Result<DiscriminatorStep> {
        let d = &self.models.discriminator;
        let (p_real, cache_real) = d.forward(&to_triplet(real), y, Phase::Train)?;
        let (p_fake, cache_fake) = d.forward(&to_triplet(fakes), y, Phase::Train)?;
        let loss = d_loss(&p_real, &p_fake)?;
        let (g_real, g_fake) = d_loss_logit_grads(&p_real, &p_fake);
        let mut grad = d.zeroed();
        d.backward(&cache_real, &g_real, &mut grad)?;
        d.backward(&cache_fake, &g_fake, &mut grad)?;
        let d = &mut self.models.discriminator;
        self.optimizers.discriminator.update(d, &grad);
        d.commit(&cache_real);
        d.commit(&cache_fake);
        Ok(DiscriminatorStep {
            loss,
            real_scores: p_real,
            fake_scores: p_fake,
        })
    }

    /// One generator and encoder update through the current discriminator,
    /// whose weights and statistics are left unchanged.
    pub fn generator_step(&mut self, prep: &Prepared) -> Result<f64> {
        let d = &self.models.discriminator;
        let (p_fake, cache) = d.forward(&to_triplet(&prep.fakes), &prep.y, Phase::Train)?;
        let loss = g_loss(&p_fake)?;
        let dlogits = g_loss_logit_grads(&p_fake);
        let mut scratch = d.zeroed();
        let d_frames = from_triplet(d.backward(&cache, &dlogits, &mut scratch)?, prep.fakes.len());

        let g = &self.models.generator;
        let mut g_grad = g.zeroed();
        let (_, dy) = g.backward(&prep.gen_cache, &d_frames, &mut g_grad)?;
        let e = &self.models.encoder;
        let mut e_grad = e.zeroed();
        e.backward(&prep.enc_cache, &dy, &mut e_grad)?;

        self.optimizers.generator.update(&mut self.models.generator, &g_grad);
        self.models.generator.commit(&prep.gen_cache);
        self.optimizers.encoder.update(&mut self.models.encoder, &e_grad);
        Ok(loss)
    }

    /// One full iteration; fails without committing the iteration counter if
    /// a loss is not finite.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let prep = self.prepare(batch)?;
        let ds = self.discriminator_step(&batch.frames, &prep.fakes, &prep.y)?;
        let gl = self.generator_step(&prep)?;
        let record = LossRecord {
            iteration: self.iteration + 1,
            d_loss: ds.loss,
            g_loss: gl,
            d_real_mean: ds.real_mean(),
            d_fake_mean: ds.fake_mean(),
        };
        if !record.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: record.iteration,
                d_loss: record.d_loss,
                g_loss: record.g_loss,
            });
        }
        self.iteration += 1;
        Ok(record)
    }
}

/// Seeded epoch-wise shuffling; positions for any iteration can be computed
/// without replaying earlier ones.
pub struct Sampler {
    seed: u64,
    len: usize,
    epochs: BTreeMap<u64, Vec<usize>>,
}

impl Sampler {
    pub fn new(seed: u64, len: usize) -> Self {
        Sampler {
            seed,
            len,
            epochs: BTreeMap::new(),
        }
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        let (seed, len) = (self.seed, self.len);
        self.epochs.retain(|&e, _| e + 1 >= epoch);
        self.epochs.entry(epoch).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM));
            rng.set_stream(epoch);
            let mut p: Vec<usize> = (0..len).collect();
            p.shuffle(&mut rng);
            p
        })
    }

    /// Dataset positions of the minibatch for `iteration`.
    pub fn batch(&mut self, iteration: u64, batch_size: usize) -> Vec<usize> {
        let start = iteration * batch_size as u64;
        let len = self.len as u64;
        (0..batch_size as u64)
            .map(|j| {
                let g = start + j;
                self.permutation(g / len)[(g % len) as usize]
            })
            .collect()
    }
}

/// Where `train` writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub losses: Option<PathBuf>,
}

fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    if dataset.mode() != config.mode.dataset_mode() {
        return Err(Error::ModeMismatch {
            expected: config.mode.dataset_mode().to_string(),
            found: dataset.mode().to_string(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.image_size != config.model.image_size {
        return Err(Error::InvalidConfig(format!(
            "dataset crops are {0}x{0} but image_size is {1}",
            dataset.image_size, config.model.image_size
        )));
    }
    Ok(())
}

/// Continues `state` until `state.config.iterations`, appending to the
/// loss log and checkpointing as configured.
pub fn resume(
    state: &mut TrainState,
    dataset: &Dataset,
    outputs: &TrainOutputs,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    check_dataset(&state.config, dataset)?;
    let mut log = match &outputs.losses {
        Some(p) => {
            let fresh = state.iteration == 0 || !p.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            if fresh {
                writeln!(f, "{}", LossRecord::TSV_HEADER).map_err(|e| Error::io(p, e))?;
            }
            Some((p.clone(), f))
        }
        None => None,
    };
    let mut sampler = Sampler::new(state.config.seed, dataset.len());
    let mut records = vec![];
    while state.iteration < state.config.iterations {
        let positions = sampler.batch(state.iteration, state.config.batch_size);
        let batch = Batch::from_dataset(dataset, &positions)?;
        let record = state.train_step(&batch)?;
        if let Some((p, f)) = &mut log {
            writeln!(f, "{}", record.to_tsv_row()).map_err(|e| Error::io(p.as_path(), e))?;
        }
        on_step(&record);
        records.push(record);
        let every = state.config.checkpoint_every;
        if let Some(ck) = &outputs.checkpoint {
            if every > 0 && state.iteration % every == 0 && state.iteration < state.config.iterations {
                save_checkpoint(state, ck)?;
            }
        }
    }
    if let Some(ck) = &outputs.checkpoint {
        save_checkpoint(state, ck)?;
    }
    Ok(records)
}

/// Trains from scratch.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    outputs: &TrainOutputs,
    on_step: impl FnMut(&LossRecord),
) -> Result<(TrainState, Vec<LossRecord>)> {
    check_dataset(config, dataset)?;
    let mut state = TrainState::new(config.clone())?;
    let records = resume(&mut state, dataset, outputs, on_step)?;
    Ok((state, records))
}

/// Reads a loss log written by [`train`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LossRecord::TSV_HEADER) {
        return Err(Error::InvalidConfig(format!("{}: not a loss log", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            let bad = || Error::InvalidConfig(format!("bad loss row {l:?}"));
            if c.len() != 5 {
                return Err(bad());
            }
            let f = |i: usize| c[i].parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                iteration: c[0].parse().map_err(|_| bad())?,
                d_loss: f(1)?,
                g_loss: f(2)?,
                d_real_mean: f(3)?,
                d_fake_mean: f(4)?,
            })
        })
        .collect()
}
