//! Dense row-major `f64` tensor used by every network in the crate.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Samples every element from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(shape, &self.shape));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Slice of the `i`-th entry along the leading axis.
    pub fn outer(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [f64] {
        let stride = self.data.len() / self.shape[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Concatenates tensors with equal trailing shape along the leading axis.
    pub fn stack_outer(parts: &[&Tensor]) -> Tensor {
        let inner = &parts[0].shape[1..];
        let lead: usize = parts.iter().map(|t| t.shape[0]).sum();
        let mut shape = vec![lead];
        shape.extend_from_slice(inner);
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            debug_assert_eq!(&p.shape[1..], inner);
            data.extend_from_slice(&p.data);
        }
        Tensor { shape, data }
    }

    /// Splits along the leading axis into `parts` equal pieces.
    pub fn split_outer(&self, parts: usize) -> Vec<Tensor> {
        let lead = self.shape[0] / parts;
        let mut shape = self.shape.clone();
        shape[0] = lead;
        let chunk = self.data.len() / parts;
        self.data
            .chunks(chunk)
            .map(|c| Tensor {
                shape: shape.clone(),
                data: c.to_vec(),
            })
            .collect()
    }

    /// Gathers entries `rows` along the leading axis.
    pub fn select_outer(&self, rows: &[usize]) -> Tensor {
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        let mut data = Vec::with_capacity(shape.iter().product());
        for &r in rows {
            data.extend_from_slice(self.outer(r));
        }
        Tensor { shape, data }
    }

    /// Concatenates two `[N, C, ...]` tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        let n = a.shape[0];
        debug_assert_eq!(n, b.shape[0]);
        debug_assert_eq!(a.shape[2..], b.shape[2..]);
        let (sa, sb) = (a.data.len() / n, b.data.len() / n);
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for i in 0..n {
            data.extend_from_slice(&a.data[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&b.data[i * sb..(i + 1) * sb]);
        }
        let mut shape = a.shape.clone();
        shape[1] += b.shape[1];
        Tensor { shape, data }
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off the first `c` channels.
    pub fn split_channels(&self, c: usize) -> (Tensor, Tensor) {
        let n = self.shape[0];
        let per = self.data.len() / n;
        let spatial = per / self.shape[1];
        let sa = c * spatial;
        let mut a = Vec::with_capacity(n * sa);
        let mut b = Vec::with_capacity(n * (per - sa));
        for i in 0..n {
            let row = &self.data[i * per..(i + 1) * per];
            a.extend_from_slice(&row[..sa]);
            b.extend_from_slice(&row[sa..]);
        }
        let mut shape_a = self.shape.clone();
        shape_a[1] = c;
        let mut shape_b = self.shape.clone();
        shape_b[1] -= c;
        (
            Tensor {
                shape: shape_a,
                data: a,
            },
            Tensor {
                shape: shape_b,
                data: b,
            },
        )
    }
}
