use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// He-style initialization: `N(0, 2 / fan_in)`.
    pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// A `[rows, cols]` matrix from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("tensor", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Concatenates `[B, n_i]` matrices along the feature axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let batch = parts.first().map_or(0, |t| t.batch());
    for p in parts {
        if p.shape().len() != 2 || p.batch() != batch {
            return Err(Error::shape(
                "concat",
                format!("expected [{batch}, n] inputs, got {:?}", p.shape()),
            ));
        }
    }
    let width: usize = parts.iter().map(|p| p.row_len()).sum();
    let mut data = Vec::with_capacity(batch * width);
    for b in 0..batch {
        for p in parts {
            data.extend_from_slice(p.row(b));
        }
    }
    Tensor::new(vec![batch, width], data)
}

/// Inverse of [`concat_cols`]: splits a `[B, sum(widths)]` gradient.
pub fn split_cols(t: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = widths.iter().sum();
    if t.shape().len() != 2 || t.row_len() != total {
        return Err(Error::shape(
            "concat",
            format!("cannot split {:?} into widths {widths:?}", t.shape()),
        ));
    }
    let batch = t.batch();
    let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(batch * w)).collect();
    for b in 0..batch {
        let row = t.row(b);
        let mut off = 0;
        for (o, w) in outs.iter_mut().zip(widths) {
            o.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(vec![batch, w], d))
        .collect()
}
