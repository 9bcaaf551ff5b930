//! 1-D convolutional audio encoder producing the 128-d condition vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, leaky_relu_backward, Conv1d, Linear, Params};
use crate::tensor::Tensor;

pub const EMBEDDING_DIM: usize = 128;
/// 0.1 s at 16 kHz.
pub const SEGMENT_LEN: usize = 1600;
/// 1 s at 16 kHz.
pub const BASELINE_LEN: usize = 16000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layer_specs: Vec<LayerSpec>,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
    pub input_len: usize,
}

impl Default for EncoderConfig {
    /// Five stride-4 layers with kernel 15 for 0.1 s segments.
    fn default() -> Self {
        EncoderConfig::with_channels(&[32, 64, 64, 128, 128], 15, 4, SEGMENT_LEN)
    }
}

impl EncoderConfig {
    pub fn with_channels(channels: &[usize], kernel: usize, stride: usize, input_len: usize) -> Self {
        EncoderConfig {
            layer_specs: channels
                .iter()
                .map(|&out_channels| LayerSpec {
                    out_channels,
                    kernel,
                    stride,
                })
                .collect(),
            embedding_dim: EMBEDDING_DIM,
            leaky_slope: 0.2,
            input_len,
        }
    }

    /// The 1 s variant: one extra stride-4 layer over 16000 samples.
    pub fn baseline() -> Self {
        EncoderConfig::with_channels(&[32, 64, 64, 128, 128, 128], 15, 4, BASELINE_LEN)
    }

    /// Extends a segment config to 1 s inputs by appending one more layer
    /// that repeats the last spec.
    pub fn to_baseline(&self) -> Self {
        let mut c = self.clone();
        if let Some(&last) = c.layer_specs.last() {
            c.layer_specs.push(last);
        }
        c.input_len = BASELINE_LEN;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(Error::InvalidConfig(format!(
                "embedding_dim must be {EMBEDDING_DIM}, got {}",
                self.embedding_dim
            )));
        }
        if self.layer_specs.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one layer".into()));
        }
        let mut len = self.input_len;
        for (i, s) in self.layer_specs.iter().enumerate() {
            if s.kernel == 0 || s.stride == 0 || s.out_channels == 0 {
                return Err(Error::InvalidConfig(format!("invalid encoder layer {i}: {s:?}")));
            }
            let padded = len + 2 * (s.kernel / 2);
            if padded < s.kernel {
                return Err(Error::InvalidConfig(format!(
                    "encoder layer {i} sees only {len} samples"
                )));
            }
            len = (padded - s.kernel) / s.stride + 1;
        }
        Ok(())
    }

    /// Closed-form count: conv weights and biases plus the affine head.
    pub fn param_count(&self) -> usize {
        let mut c_in = 1;
        let mut n = 0;
        for s in &self.layer_specs {
            n += s.kernel * c_in * s.out_channels + s.out_channels;
            c_in = s.out_channels;
        }
        n + c_in * self.embedding_dim + self.embedding_dim
    }
}

/// 128 finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbedding(Vec<f64>);

impl AudioEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::WrongInputLength {
                expected: EMBEDDING_DIM,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite embedding".into()));
        }
        Ok(AudioEmbedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Stacks embeddings into `[N, 128]`.
    pub fn batch(items: &[AudioEmbedding]) -> Tensor {
        let data = items.iter().flat_map(|e| e.0.iter().copied()).collect();
        Tensor::from_vec(&[items.len(), EMBEDDING_DIM], data).expect("fixed width")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub convs: Vec<Conv1d>,
    pub head: Linear,
}

pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_in = 1;
    let mut convs = Vec::with_capacity(config.layer_specs.len());
    for s in &config.layer_specs {
        convs.push(Conv1d::new(c_in, s.out_channels, s.kernel, s.stride, s.kernel / 2, &mut rng));
        c_in = s.out_channels;
    }
    let head = Linear::new(c_in, config.embedding_dim, &mut rng);
    Ok(EncoderWeights {
        config: config.clone(),
        convs,
        head,
    })
}

pub struct EncoderCache {
    /// Input of every conv layer.
    inputs: Vec<Tensor>,
    /// Pre-activation output of every conv layer.
    pre: Vec<Tensor>,
    pooled: Tensor,
}

impl EncoderWeights {
    /// Batched forward over `[N, input_len]`, returning `[N, 128]`.
    pub fn forward(&self, audio: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let s = audio.shape();
        if s.len() != 2 || s[1] != self.config.input_len {
            return Err(Error::WrongInputLength {
                expected: self.config.input_len,
                actual: s.get(1).copied().unwrap_or(0),
            });
        }
        let n = s[0];
        let slope = self.config.leaky_slope;
        let mut x = audio.clone().reshape(&[n, 1, s[1]])?;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let y = conv.forward(&x)?;
            inputs.push(x);
            x = leaky_relu(&y, slope);
            pre.push(y);
        }
        let (c, len) = (x.dim(1), x.dim(2));
        let mut pooled = Tensor::zeros(&[n, c]);
        for i in 0..n {
            let row = x.outer(i);
            for (ch, p) in pooled.outer_mut(i).iter_mut().enumerate() {
                *p = row[ch * len..(ch + 1) * len].iter().sum::<f64>() / len as f64;
            }
        }
        let out = self.head.forward(&pooled)?;
        Ok((out, EncoderCache { inputs, pre, pooled }))
    }

    /// Accumulates parameter gradients for `dL/d(embedding)` of shape `[N, 128]`.
    pub fn backward(&self, cache: &EncoderCache, dy: &Tensor, grad: &mut EncoderWeights) -> Result<()> {
        let d_pooled = self.head.backward(&cache.pooled, dy, &mut grad.head)?;
        let last = cache.pre.last().expect("at least one layer");
        let (n, c, len) = (last.dim(0), last.dim(1), last.dim(2));
        let mut d = Tensor::zeros(&[n, c, len]);
        for i in 0..n {
            let g = d_pooled.outer(i).to_vec();
            let row = d.outer_mut(i);
            for ch in 0..c {
                row[ch * len..(ch + 1) * len].fill(g[ch] / len as f64);
            }
        }
        for l in (0..self.convs.len()).rev() {
            let dpre = leaky_relu_backward(&cache.pre[l], &d, self.config.leaky_slope);
            d = self.convs[l].backward(&cache.inputs[l], &dpre, &mut grad.convs[l])?;
        }
        Ok(())
    }
}

/// Embeds one normalized segment.
pub fn encode(segment: &[f32], weights: &EncoderWeights) -> Result<AudioEmbedding> {
    if segment.len() != weights.config.input_len {
        return Err(Error::WrongInputLength {
            expected: weights.config.input_len,
            actual: segment.len(),
        });
    }
    let x = Tensor::from_vec(&[1, segment.len()], segment.iter().map(|&v| v as f64).collect())?;
    let (y, _) = weights.forward(&x)?;
    AudioEmbedding::new(y.into_data())
}

impl Params for EncoderWeights {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.convs.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.convs.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let c = EncoderConfig::default();
        assert_eq!(init_encoder(&c, 1).unwrap(), init_encoder(&c, 1).unwrap());
        assert_ne!(
            init_encoder(&c, 1).unwrap().flatten(),
            init_encoder(&c, 2).unwrap().flatten()
        );
    }

    #[test]
    fn param_count_matches_closed_form() {
        for c in [EncoderConfig::default(), EncoderConfig::baseline()] {
            let w = init_encoder(&c, 0).unwrap();
            // Σ(k·c_in·c_out + c_out) + head
            let mut expect = 0;
            let mut c_in = 1;
            for s in &c.layer_specs {
                expect += s.kernel * c_in * s.out_channels + s.out_channels;
                c_in = s.out_channels;
            }
            expect += c_in * 128 + 128;
            assert_eq!(w.param_count(), expect);
        }
    }

    #[test]
    fn output_is_128_and_zero_weights_give_zero() {
        let c = EncoderConfig::with_channels(&[4, 4], 15, 4, SEGMENT_LEN);
        let mut w = init_encoder(&c, 3).unwrap();
        let seg: Vec<f32> = (0..SEGMENT_LEN).map(|i| ((i as f32) * 0.01).sin()).collect();
        let e = encode(&seg, &w).unwrap();
        assert_eq!(e.values().len(), 128);
        w.visit_mut(&mut |t| t.fill(0.0));
        assert!(encode(&seg, &w).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_and_bad_spec() {
        let w = init_encoder(&EncoderConfig::default(), 0).unwrap();
        let long = vec![0.0f32; BASELINE_LEN];
        assert!(matches!(encode(&long, &w), Err(Error::WrongInputLength { .. })));
        let mut c = EncoderConfig::default();
        c.layer_specs[1].stride = 0;
        assert!(init_encoder(&c, 0).is_err());
        c = EncoderConfig::default();
        c.layer_specs[0].kernel = 0;
        assert!(init_encoder(&c, 0).is_err());
    }

    #[test]
    fn baseline_config_accepts_one_second() {
        let w = init_encoder(&EncoderConfig::baseline(), 0).unwrap();
        assert_eq!(w.convs.len(), 6);
        assert_eq!(encode(&vec![0.1f32; BASELINE_LEN], &w).unwrap().values().len(), 128);
    }
}
