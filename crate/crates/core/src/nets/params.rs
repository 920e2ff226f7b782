use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a named parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Flat parameter vector with named matrix slices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    slices: Vec<ParamSlice>,
    data: Vec<f64>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Shape(format!("duplicate parameter {name}")));
        }
        self.slices.push(ParamSlice {
            name: name.to_string(),
            rows: value.rows,
            cols: value.cols,
            offset: self.data.len(),
        });
        self.data.extend_from_slice(&value.data);
        Ok(ParamId(self.slices.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slices.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn slice(&self, id: ParamId) -> &ParamSlice {
        &self.slices[id.0]
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        let s = &self.slices[id.0];
        &self.data[s.offset..s.offset + s.rows * s.cols]
    }

    pub fn matrix(&self, id: ParamId) -> Matrix {
        let s = &self.slices[id.0];
        Matrix::from_vec(s.rows, s.cols, self.values(id).to_vec())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copies values from another store with the same layout.
    pub fn load_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.slices != other.slices {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(vec![0.0; self.data.len()])
    }
}

/// Gradient accumulator mirroring a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn slice<'a>(&'a self, store: &ParameterStore, id: ParamId) -> &'a [f64] {
        let s = store.slice(id);
        &self.0[s.offset..s.offset + s.rows * s.cols]
    }

    pub(crate) fn accumulate(&mut self, slice: &ParamSlice, grad: &Matrix) {
        for (g, d) in self.0[slice.offset..slice.offset + grad.data.len()]
            .iter_mut()
            .zip(&grad.data)
        {
            *g += d;
        }
    }

    pub fn reset(&mut self) {
        self.0.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// Gaussian weights scaled by `gain / sqrt(fan_in)`.
pub fn fan_in_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Matrix {
    let scale = gain / (rows as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect(),
    )
}

/// Orthogonal init via Gram-Schmidt on a Gaussian matrix, scaled by `gain`.
pub fn orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Matrix {
    // orthonormalize along the longer dimension's vectors of the shorter one
    let (n, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut m = Matrix::zeros(rows, cols);
    for (i, v) in vecs.iter().enumerate() {
        for (j, x) in v.iter().enumerate() {
            if rows >= cols {
                m.set(j, i, gain * x);
            } else {
                m.set(i, j, gain * x);
            }
        }
    }
    m
}
