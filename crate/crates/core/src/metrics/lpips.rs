use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, ConvGeom};
use crate::tensor::Tensor;

/// Maps an image `[3, H, W]` to a list of feature maps `[C_l, H_l, W_l]`.
pub trait FeatureExtractor: Sync {
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>>;
}

const UNIT_EPS: f64 = 1e-10;
pub const EXTRACTOR_MAGIC: &[u8; 8] = b"TAVGFX01";

/// Scales the channel vector at every spatial position to unit length.
fn unit_normalize(f: &Tensor) -> Tensor {
    let (c, hw) = (f.dim(0), f.len() / f.dim(0));
    let mut out = f.clone();
    let d = out.data_mut();
    for p in 0..hw {
        let norm = (0..c).map(|ch| d[ch * hw + p].powi(2)).sum::<f64>().sqrt();
        for ch in 0..c {
            d[ch * hw + p] /= norm + UNIT_EPS;
        }
    }
    out
}

/// Perceptual distance: for each layer, the squared difference of
/// channel-normalized features summed over channels and averaged over
/// positions, then summed over layers.
pub fn lpips(a: &Tensor, b: &Tensor, extractor: &dyn FeatureExtractor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    let fa = extractor.features(a)?;
    let fb = extractor.features(b)?;
    if fa.len() != fb.len() {
        return Err(Error::Extractor("layer counts differ between inputs".into()));
    }
    let mut total = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        if x.shape() != y.shape() || x.shape().len() != 3 {
            return Err(Error::Extractor(format!(
                "feature shapes {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let (nx, ny) = (unit_normalize(x), unit_normalize(y));
        let positions = (x.dim(1) * x.dim(2)) as f64;
        let sq: f64 = nx.data().iter().zip(ny.data()).map(|(p, q)| (p - q) * (p - q)).sum();
        total += sq / positions;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub conv: Conv2d,
}

/// A stack of convolutions with leaky-ReLU activations whose every
/// activation is a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFeatureExtractor {
    pub layers: Vec<FeatureLayer>,
    pub leaky_slope: f64,
}

impl ConvFeatureExtractor {
    /// Fixed random weights (He-scaled normal) from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = [(3, 16, 1), (16, 32, 2), (32, 64, 2)];
        let layers = spec
            .iter()
            .map(|&(c_in, c_out, stride)| {
                let mut conv = Conv2d::new(c_in, c_out, ConvGeom::square(3, stride, 1), true, &mut rng);
                let scale = (2.0 / (9 * c_in) as f64).sqrt() / crate::nn::INIT_STD;
                conv.weight = conv.weight.map(|v| v * scale);
                FeatureLayer { conv }
            })
            .collect();
        ConvFeatureExtractor {
            layers,
            leaky_slope: 0.2,
        }
    }

    /// Reads weights in the extractor format: the 8-byte magic, a `u32`
    /// layer count, then per layer `u32` fields `c_out, c_in, kernel,
    /// stride, padding` followed by `c_out*c_in*kernel*kernel` weights and
    /// `c_out` biases as `f64`. Integers and floats are little-endian.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Extractor(format!("feature weights: {m}"));
        if bytes.len() < 12 || &bytes[..8] != EXTRACTOR_MAGIC {
            return Err(bad("missing header"));
        }
        let mut pos = 8;
        let u32_at = |pos: &mut usize| -> Result<usize> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(|| bad("truncated"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        };
        let n_layers = u32_at(&mut pos)?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut prev_out = 3;
        for _ in 0..n_layers {
            let (c_out, c_in, k, stride, pad) = (
                u32_at(&mut pos)?,
                u32_at(&mut pos)?,
                u32_at(&mut pos)?,
                u32_at(&mut pos)?,
                u32_at(&mut pos)?,
            );
            if c_in != prev_out || c_out == 0 || k == 0 || stride == 0 {
                return Err(bad("inconsistent layer shape"));
            }
            let n_w = c_out * c_in * k * k;
            let mut floats = |n: usize| -> Result<Vec<f64>> {
                let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated"))?;
                pos += 8 * n;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect())
            };
            let weight = Tensor::from_vec(&[c_out, c_in, k, k], floats(n_w)?)?;
            let bias = Tensor::from_vec(&[c_out], floats(c_out)?)?;
            layers.push(FeatureLayer {
                conv: Conv2d {
                    weight,
                    bias: Some(bias),
                    geom: ConvGeom::square(k, stride, pad),
                },
            });
            prev_out = c_out;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        if layers.is_empty() {
            return Err(bad("no layers"));
        }
        Ok(ConvFeatureExtractor {
            layers,
            leaky_slope: 0.2,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = EXTRACTOR_MAGIC.to_vec();
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let c = &l.conv;
            for v in [c.c_out(), c.c_in(), c.geom.kh, c.geom.sh, c.geom.ph] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for v in c.weight.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let zeros = Tensor::zeros(&[c.c_out()]);
            for v in c.bias.as_ref().unwrap_or(&zeros).data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Extractor(format!("expected a [3, H, W] image, got {s:?}")));
        }
        let mut x = image.clone().reshape(&[1, s[0], s[1], s[2]])?;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            x = leaky_relu(&l.conv.forward(&x)?, self.leaky_slope);
            let (c, h, w) = (x.dim(1), x.dim(2), x.dim(3));
            out.push(x.clone().reshape(&[c, h, w])?);
        }
        Ok(out)
    }
}
