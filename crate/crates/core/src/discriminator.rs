//! Temporal conditional discriminator `D(x_t, x_{t+1}, x_{t+2}, y)`.
//!
//! Each frame passes a weight-tied stack of stride-2 conv blocks (leaky ReLU,
//! batch norm on all but the first). A ConvGRU consumes the three feature
//! maps in order from a zero state; its final state is concatenated with the
//! spatially broadcast embedding and reduced by conv, global average pooling,
//! an affine map and a sigmoid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convgru::{unroll_backward, unroll_cached, GruConfig, GruWeights, StepCache, StepInputs};
use crate::encoder::{AudioEmbedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::generator::FRAMES_PER_SAMPLE;
use crate::nn::{
    leaky_relu, leaky_relu_backward, sigmoid_scalar, BatchNorm, BnCache, Conv2d, ConvGeom, Linear,
    Params, Phase,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub in_size: usize,
    pub base_channels: usize,
    pub gru_channels: usize,
    pub gru_kernel: usize,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_size: 64,
            base_channels: 64,
            gru_channels: 64,
            gru_kernel: 3,
            embedding_dim: EMBEDDING_DIM,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.in_size.is_power_of_two() || self.in_size < 8 {
            return Err(Error::InvalidConfig(format!(
                "in_size must be a power of two >= 8, got {}",
                self.in_size
            )));
        }
        if self.base_channels == 0 || self.gru_channels == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("discriminator dimensions must be positive".into()));
        }
        if self.gru_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("gru_kernel must be odd".into()));
        }
        Ok(())
    }

    /// Number of stride-2 blocks down to 4×4.
    pub fn blocks(&self) -> usize {
        (self.in_size / 4).trailing_zeros() as usize
    }

    pub fn block_channels(&self) -> Vec<usize> {
        (0..self.blocks()).map(|i| self.base_channels << i).collect()
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut c_in = 3;
        for (i, c) in self.block_channels().into_iter().enumerate() {
            n += c * c_in * 16;
            if i > 0 {
                n += 2 * c;
            }
            c_in = c;
        }
        let k2 = self.gru_kernel * self.gru_kernel;
        n += 3 * k2 * self.gru_channels * (c_in + self.gru_channels);
        let cls_in = self.gru_channels + self.embedding_dim;
        n += 9 * cls_in * self.base_channels + self.base_channels;
        n + self.base_channels + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownBlock {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorWeights {
    pub config: DiscriminatorConfig,
    pub blocks: Vec<DownBlock>,
    pub gru: GruWeights,
    pub classifier: Conv2d,
    pub out: Linear,
}

/// `p ∈ (0, 1)`, the probability that the triplet is real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealnessScore(pub f64);

pub fn init_discriminator(config: &DiscriminatorConfig, seed: u64) -> Result<DiscriminatorWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_in = 3;
    let mut blocks = vec![];
    for (i, c) in config.block_channels().into_iter().enumerate() {
        blocks.push(DownBlock {
            conv: Conv2d::new(c_in, c, ConvGeom::square(4, 2, 1), false, &mut rng),
            bn: (i > 0).then(|| BatchNorm::new(c)),
        });
        c_in = c;
    }
    let gru = GruWeights::new(
        GruConfig::new(c_in, config.gru_channels, 4, 4, config.gru_kernel),
        &mut rng,
    )?;
    let classifier = Conv2d::new(
        config.gru_channels + config.embedding_dim,
        config.base_channels,
        ConvGeom::same(3),
        true,
        &mut rng,
    );
    let out = Linear::new(config.base_channels, 1, &mut rng);
    Ok(DiscriminatorWeights {
        config: config.clone(),
        blocks,
        gru,
        classifier,
        out,
    })
}

pub struct DiscriminatorCache {
    n: usize,
    block_in: Vec<Tensor>,
    block_bn: Vec<Option<BnCache>>,
    block_pre: Vec<Tensor>,
    gru: Vec<StepCache>,
    cls_in: Tensor,
    cls_pre: Tensor,
    pooled: Tensor,
    pub logits: Vec<f64>,
}

impl DiscriminatorWeights {
    fn check_frames(&self, frames: &[Tensor]) -> Result<usize> {
        if frames.len() != FRAMES_PER_SAMPLE {
            return Err(Error::WrongInputLength {
                expected: FRAMES_PER_SAMPLE,
                actual: frames.len(),
            });
        }
        let n = frames[0].shape().first().copied().unwrap_or(0);
        let s = self.config.in_size;
        for f in frames {
            f.expect_shape(&[n, 3, s, s])?;
        }
        Ok(n)
    }

    /// Batched forward. Frames are three `[N, 3, S, S]` tensors in temporal
    /// order, `y` is `[N, embedding_dim]`. Returns the probabilities.
    pub fn forward(&self, frames: &[Tensor], y: &Tensor, phase: Phase) -> Result<(Vec<f64>, DiscriminatorCache)> {
        let n = self.check_frames(frames)?;
        y.expect_shape(&[n, self.config.embedding_dim])?;
        let slope = self.config.leaky_slope;
        let refs: Vec<&Tensor> = frames.iter().collect();
        let mut x = Tensor::stack_outer(&refs);
        let mut block_in = vec![];
        let mut block_bn = vec![];
        let mut block_pre = vec![];
        for b in &self.blocks {
            let c = b.conv.forward(&x)?;
            let (pre, bc) = match &b.bn {
                Some(bn) => {
                    let (p, bc) = bn.forward(&c, phase)?;
                    (p, Some(bc))
                }
                None => (c, None),
            };
            block_in.push(x);
            x = leaky_relu(&pre, slope);
            block_bn.push(bc);
            block_pre.push(pre);
        }
        let seq = x.split_outer(FRAMES_PER_SAMPLE);
        let h0 = self.gru.zero_state(n);
        let (hs, gru) = unroll_cached(StepInputs::Sequence(&seq), &h0, &self.gru)?;
        let last = hs.last().expect("three steps");
        let (hh, ww) = (last.dim(2), last.dim(3));
        let e = self.config.embedding_dim;
        let mut ymap = Tensor::zeros(&[n, e, hh, ww]);
        for i in 0..n {
            let yi = y.outer(i).to_vec();
            let row = ymap.outer_mut(i);
            for (ch, v) in yi.iter().enumerate() {
                row[ch * hh * ww..(ch + 1) * hh * ww].fill(*v);
            }
        }
        let cls_in = Tensor::concat_channels(last, &ymap);
        let cls_pre = self.classifier.forward(&cls_in)?;
        let act = leaky_relu(&cls_pre, slope);
        let c = act.dim(1);
        let mut pooled = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let row = act.outer(i);
            for (ch, p) in pooled.outer_mut(i).iter_mut().enumerate() {
                *p = row[ch * hh * ww..(ch + 1) * hh * ww].iter().sum::<f64>() / (hh * ww) as f64;
            }
        }
        let logits = self.out.forward(&pooled)?.into_data();
        let probs = logits.iter().map(|&l| sigmoid_scalar(l)).collect();
        Ok((
            probs,
            DiscriminatorCache {
                n,
                block_in,
                block_bn,
                block_pre,
                gru,
                cls_in,
                cls_pre,
                pooled,
                logits,
            },
        ))
    }

    /// Backward from `dL/dlogit` (`[N]`). Accumulates parameter gradients and
    /// returns the gradient for each input frame.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        d_logits: &[f64],
        grad: &mut DiscriminatorWeights,
    ) -> Result<Vec<Tensor>> {
        let n = cache.n;
        let dl = Tensor::from_vec(&[n, 1], d_logits.to_vec())?;
        let d_pooled = self.out.backward(&cache.pooled, &dl, &mut grad.out)?;
        let (c, hh, ww) = (cache.cls_pre.dim(1), cache.cls_pre.dim(2), cache.cls_pre.dim(3));
        let mut d_act = Tensor::zeros(cache.cls_pre.shape());
        for i in 0..n {
            let g = d_pooled.outer(i).to_vec();
            let row = d_act.outer_mut(i);
            for ch in 0..c {
                row[ch * hh * ww..(ch + 1) * hh * ww].fill(g[ch] / (hh * ww) as f64);
            }
        }
        let d_pre = leaky_relu_backward(&cache.cls_pre, &d_act, self.config.leaky_slope);
        let d_cls_in = self.classifier.backward(&cache.cls_in, &d_pre, &mut grad.classifier)?;
        let (d_h, _) = d_cls_in.split_channels(self.config.gru_channels);
        let steps = cache.gru.len();
        let mut d_out: Vec<Option<Tensor>> = vec![None; steps];
        d_out[steps - 1] = Some(d_h);
        let (dxs, _) = unroll_backward(&cache.gru, &d_out, &self.gru, &mut grad.gru)?;
        let refs: Vec<&Tensor> = dxs.iter().collect();
        let mut d = Tensor::stack_outer(&refs);
        for i in (0..self.blocks.len()).rev() {
            let dpre = leaky_relu_backward(&cache.block_pre[i], &d, self.config.leaky_slope);
            let dconv = match (&self.blocks[i].bn, &cache.block_bn[i], &mut grad.blocks[i].bn) {
                (Some(bn), Some(bc), Some(gbn)) => bn.backward(bc, &dpre, gbn)?,
                _ => dpre,
            };
            d = self.blocks[i]
                .conv
                .backward(&cache.block_in[i], &dconv, &mut grad.blocks[i].conv)?;
        }
        Ok(d.split_outer(FRAMES_PER_SAMPLE))
    }

    pub fn commit(&mut self, cache: &DiscriminatorCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.block_bn) {
            if let (Some(bn), Some(c)) = (&mut b.bn, c) {
                bn.commit(c);
            }
        }
    }
}

/// Scores one triplet (each frame `[3, S, S]`) in inference mode.
pub fn discriminate(frames: &[Tensor], y: &AudioEmbedding, weights: &DiscriminatorWeights) -> Result<RealnessScore> {
    if frames.len() != FRAMES_PER_SAMPLE {
        return Err(Error::WrongInputLength {
            expected: FRAMES_PER_SAMPLE,
            actual: frames.len(),
        });
    }
    let s = weights.config.in_size;
    let batched = frames
        .iter()
        .map(|f| {
            f.expect_shape(&[3, s, s])?;
            f.clone().reshape(&[1, 3, s, s])
        })
        .collect::<Result<Vec<_>>>()?;
    let yt = AudioEmbedding::batch(std::slice::from_ref(y));
    let (p, _) = weights.forward(&batched, &yt, Phase::Eval)?;
    Ok(RealnessScore(p[0]))
}

impl Params for DownBlock {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.conv.visit(f);
        if let Some(bn) = &self.bn {
            bn.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.conv.visit_mut(f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(f);
        }
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        if let Some(bn) = &self.bn {
            bn.visit_buffers(f);
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        if let Some(bn) = &mut self.bn {
            bn.visit_buffers_mut(f);
        }
    }
}

impl Params for DiscriminatorWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.blocks.visit(f);
        self.gru.visit(f);
        self.classifier.visit(f);
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.blocks.visit_mut(f);
        self.gru.visit_mut(f);
        self.classifier.visit_mut(f);
        self.out.visit_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.blocks.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.blocks.visit_buffers_mut(f);
    }
}
