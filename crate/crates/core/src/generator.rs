//! Conditional generator `G(z | y)`.
//!
//! Noise and the audio embedding are fused by an affine map into a 4×4 seed
//! map, upsampled by stride-2 transposed-convolution blocks (batch norm +
//! ReLU), then turned into frames by one of three heads:
//!
//! * [`GeneratorMode::WithGru`]: a ConvGRU with 3 hidden channels is unrolled
//!   three steps over the same feature map from a zero state; the hidden
//!   states are the frames.
//! * [`GeneratorMode::NoGru`]: a 3×3 convolution to 9 channels, `tanh`, split
//!   into three RGB frames.
//! * [`GeneratorMode::SingleFrame`]: a 3×3 convolution to one RGB frame, used
//!   by the one-second baseline.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::convgru::{unroll_backward, unroll_cached, GruConfig, GruWeights, StepCache, StepInputs};
use crate::encoder::{AudioEmbedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    relu, relu_backward, tanh, tanh_backward, BatchNorm, BnCache, Conv2d, ConvGeom,
    ConvTranspose2d, Linear, Params, Phase,
};
use crate::tensor::Tensor;

pub const NOISE_DIM: usize = 100;
pub const FRAMES_PER_SAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorMode {
    WithGru,
    NoGru,
    SingleFrame,
}

impl GeneratorMode {
    pub fn frames(self) -> usize {
        match self {
            GeneratorMode::SingleFrame => 1,
            _ => FRAMES_PER_SAMPLE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorMode::WithGru => "with_gru",
            GeneratorMode::NoGru => "no_gru",
            GeneratorMode::SingleFrame => "single_frame",
        }
    }
}

impl fmt::Display for GeneratorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_gru" => Ok(GeneratorMode::WithGru),
            "no_gru" => Ok(GeneratorMode::NoGru),
            "single_frame" => Ok(GeneratorMode::SingleFrame),
            other => Err(Error::InvalidConfig(format!("unknown generator mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    pub noise_dim: usize,
    pub embedding_dim: usize,
    pub base_channels: usize,
    pub out_size: usize,
    pub gru_kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mode: GeneratorMode::WithGru,
            noise_dim: NOISE_DIM,
            embedding_dim: EMBEDDING_DIM,
            base_channels: 64,
            out_size: 64,
            gru_kernel: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.out_size.is_power_of_two() || self.out_size < 8 {
            return Err(Error::InvalidConfig(format!(
                "out_size must be a power of two >= 8, got {}",
                self.out_size
            )));
        }
        if self.base_channels == 0 || self.noise_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("generator dimensions must be positive".into()));
        }
        if self.gru_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("gru_kernel must be odd".into()));
        }
        Ok(())
    }

    /// Number of stride-2 upsampling blocks from the 4×4 seed.
    pub fn blocks(&self) -> usize {
        (self.out_size / 4).trailing_zeros() as usize
    }

    /// Channels of the fused seed map followed by each block's output.
    pub fn channel_schedule(&self) -> Vec<usize> {
        let n = self.blocks();
        let mut out: Vec<usize> = (0..n).map(|i| self.base_channels << (n - 1 - i)).collect();
        out.push(self.base_channels);
        out
    }
}

/// Head that turns the last feature map into frames.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorHead {
    Gru(GruWeights),
    Conv(Conv2d),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpBlock {
    pub conv: ConvTranspose2d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub config: GeneratorConfig,
    pub fuse: Linear,
    pub fuse_bn: BatchNorm,
    pub blocks: Vec<UpBlock>,
    pub head: GeneratorHead,
}

pub fn init_generator(config: &GeneratorConfig, seed: u64) -> Result<GeneratorWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sched = config.channel_schedule();
    let fuse = Linear::new(config.noise_dim + config.embedding_dim, sched[0] * 16, &mut rng);
    let blocks = sched
        .windows(2)
        .map(|w| UpBlock {
            conv: ConvTranspose2d::new(w[0], w[1], ConvGeom::square(4, 2, 1), false, &mut rng),
            bn: BatchNorm::new(w[1]),
        })
        .collect();
    let feat = config.base_channels;
    let head = match config.mode {
        GeneratorMode::WithGru => {
            let gc = GruConfig::new(feat, 3, config.out_size, config.out_size, config.gru_kernel);
            GeneratorHead::Gru(GruWeights::new(gc, &mut rng)?)
        }
        GeneratorMode::NoGru => {
            GeneratorHead::Conv(Conv2d::new(feat, 9, ConvGeom::same(3), true, &mut rng))
        }
        GeneratorMode::SingleFrame => {
            GeneratorHead::Conv(Conv2d::new(feat, 3, ConvGeom::same(3), true, &mut rng))
        }
    };
    Ok(GeneratorWeights {
        config: config.clone(),
        fuse,
        fuse_bn: BatchNorm::new(sched[0]),
        blocks,
        head,
    })
}

/// Noise vector `z`, one per generated triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        NoiseVector((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite noise".into()));
        }
        Ok(NoiseVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn batch(items: &[NoiseVector]) -> Tensor {
        let dim = items.first().map_or(0, |z| z.0.len());
        let data = items.iter().flat_map(|z| z.0.iter().copied()).collect();
        Tensor::from_vec(&[items.len(), dim], data).expect("uniform noise width")
    }
}

enum HeadCache {
    Gru(Vec<StepCache>),
    Conv { out: Tensor },
}

pub struct GeneratorCache {
    zy: Tensor,
    fuse_bn: BnCache,
    fuse_pre: Tensor,
    block_in: Vec<Tensor>,
    block_bn: Vec<BnCache>,
    block_pre: Vec<Tensor>,
    feature: Tensor,
    head: HeadCache,
}

impl GeneratorWeights {
    pub fn mode(&self) -> GeneratorMode {
        self.config.mode
    }

    /// Batched forward: `z` is `[N, noise_dim]`, `y` is `[N, embedding_dim]`.
    /// Returns one `[N, 3, S, S]` tensor per frame.
    pub fn forward(&self, z: &Tensor, y: &Tensor, phase: Phase) -> Result<(Vec<Tensor>, GeneratorCache)> {
        let n = z.dim(0);
        z.expect_shape(&[n, self.config.noise_dim])?;
        y.expect_shape(&[n, self.config.embedding_dim])?;
        let zy = Tensor::concat_channels(z, y);
        let c0 = self.fuse_bn.channels();
        let fused = self.fuse.forward(&zy)?.reshape(&[n, c0, 4, 4])?;
        let (fuse_pre, fuse_bn) = self.fuse_bn.forward(&fused, phase)?;
        let mut x = relu(&fuse_pre);
        let mut block_in = Vec::with_capacity(self.blocks.len());
        let mut block_bn = Vec::with_capacity(self.blocks.len());
        let mut block_pre = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let up = b.conv.forward(&x)?;
            let (pre, bc) = b.bn.forward(&up, phase)?;
            block_in.push(x);
            x = relu(&pre);
            block_bn.push(bc);
            block_pre.push(pre);
        }
        let feature = x;
        let (frames, head) = match &self.head {
            GeneratorHead::Gru(g) => {
                let h0 = g.zero_state(n);
                let (hs, caches) = unroll_cached(StepInputs::Repeat(&feature, FRAMES_PER_SAMPLE), &h0, g)?;
                (hs, HeadCache::Gru(caches))
            }
            GeneratorHead::Conv(c) => {
                let out = tanh(&c.forward(&feature)?);
                let frames = (0..c.c_out() / 3)
                    .map(|i| {
                        let (_, rest) = out.split_channels(3 * i);
                        rest.split_channels(3).0
                    })
                    .collect();
                (frames, HeadCache::Conv { out })
            }
        };
        Ok((
            frames,
            GeneratorCache {
                zy,
                fuse_bn,
                fuse_pre,
                block_in,
                block_bn,
                block_pre,
                feature,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `(dL/dz, dL/dy)`.
    pub fn backward(
        &self,
        cache: &GeneratorCache,
        d_frames: &[Tensor],
        grad: &mut GeneratorWeights,
    ) -> Result<(Tensor, Tensor)> {
        let mut d = match (&self.head, &cache.head, &mut grad.head) {
            (GeneratorHead::Gru(g), HeadCache::Gru(caches), GeneratorHead::Gru(gg)) => {
                let douts: Vec<Option<Tensor>> = d_frames.iter().cloned().map(Some).collect();
                let (dxs, _) = unroll_backward(caches, &douts, g, gg)?;
                let mut acc = dxs[0].clone();
                for dx in &dxs[1..] {
                    acc.add_assign(dx);
                }
                acc
            }
            (GeneratorHead::Conv(c), HeadCache::Conv { out }, GeneratorHead::Conv(gc)) => {
                let mut dout = d_frames[0].clone();
                for f in &d_frames[1..] {
                    dout = Tensor::concat_channels(&dout, f);
                }
                let dpre = tanh_backward(out, &dout);
                c.backward(&cache.feature, &dpre, gc)?
            }
            _ => return Err(Error::InvalidConfig("generator head/cache mismatch".into())),
        };
        for i in (0..self.blocks.len()).rev() {
            let dpre = relu_backward(&cache.block_pre[i], &d);
            let dup = self.blocks[i].bn.backward(&cache.block_bn[i], &dpre, &mut grad.blocks[i].bn)?;
            d = self.blocks[i]
                .conv
                .backward(&cache.block_in[i], &dup, &mut grad.blocks[i].conv)?;
        }
        let dpre = relu_backward(&cache.fuse_pre, &d);
        let dfused = self.fuse_bn.backward(&cache.fuse_bn, &dpre, &mut grad.fuse_bn)?;
        let n = dfused.dim(0);
        let dfused = dfused.reshape(&[n, self.fuse.d_out()])?;
        let dzy = self.fuse.backward(&cache.zy, &dfused, &mut grad.fuse)?;
        Ok(dzy.split_channels(self.config.noise_dim))
    }

    /// Folds training-phase batch statistics into the running averages.
    pub fn commit(&mut self, cache: &GeneratorCache) {
        self.fuse_bn.commit(&cache.fuse_bn);
        for (b, c) in self.blocks.iter_mut().zip(&cache.block_bn) {
            b.bn.commit(c);
        }
    }

    /// Inference-mode generation for a batch; frames are `[N, 3, S, S]`.
    pub fn generate_batch(&self, z: &Tensor, y: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.forward(z, y, Phase::Eval)?.0)
    }
}

/// Generates the frames for one `(z, y)` pair in inference mode; each frame is
/// `[3, S, S]` with values in `[-1, 1]`.
pub fn generate(z: &NoiseVector, y: &AudioEmbedding, weights: &GeneratorWeights) -> Result<Vec<Tensor>> {
    let zt = NoiseVector::batch(std::slice::from_ref(z));
    let yt = AudioEmbedding::batch(std::slice::from_ref(y));
    let s = weights.config.out_size;
    weights
        .generate_batch(&zt, &yt)?
        .into_iter()
        .map(|f| f.reshape(&[3, s, s]))
        .collect()
}

impl Params for UpBlock {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.bn.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.bn.visit_buffers_mut(f);
    }
}

impl Params for GeneratorHead {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        match self {
            GeneratorHead::Gru(g) => g.visit(f),
            GeneratorHead::Conv(c) => c.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            GeneratorHead::Gru(g) => g.visit_mut(f),
            GeneratorHead::Conv(c) => c.visit_mut(f),
        }
    }
}

impl Params for GeneratorWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.fuse.visit(f);
        self.fuse_bn.visit(f);
        self.blocks.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.fuse.visit_mut(f);
        self.fuse_bn.visit_mut(f);
        self.blocks.visit_mut(f);
        self.head.visit_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.fuse_bn.visit_buffers(f);
        self.blocks.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.fuse_bn.visit_buffers_mut(f);
        self.blocks.visit_buffers_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: GeneratorMode) -> GeneratorConfig {
        GeneratorConfig {
            mode,
            base_channels: 4,
            out_size: 16,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn schedule_for_default_config() {
        let c = GeneratorConfig::default();
        assert_eq!(c.blocks(), 4);
        assert_eq!(c.channel_schedule(), vec![512, 256, 128, 64, 64]);
    }

    #[test]
    fn heads_per_mode() {
        let g = init_generator(&tiny(GeneratorMode::NoGru), 1).unwrap();
        match &g.head {
            GeneratorHead::Conv(c) => assert_eq!(c.c_out(), 9),
            _ => panic!("expected conv head"),
        }
        let g = init_generator(&tiny(GeneratorMode::WithGru), 1).unwrap();
        match &g.head {
            GeneratorHead::Gru(w) => assert_eq!(w.config.c_h, 3),
            _ => panic!("expected gru head"),
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        for s in [0, 4, 12, 48] {
            let c = GeneratorConfig {
                out_size: s,
                ..GeneratorConfig::default()
            };
            assert!(init_generator(&c, 0).is_err(), "size {s}");
        }
    }

    #[test]
    fn seed_repeat_is_identical() {
        let c = tiny(GeneratorMode::WithGru);
        assert_eq!(init_generator(&c, 5).unwrap(), init_generator(&c, 5).unwrap());
    }
}
