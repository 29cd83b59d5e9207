use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// A shape of `[]` denotes a scalar. Every dimension is strictly positive, so
/// `data.len()` always equals the product of the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "array shape {shape:?} has a zero dimension"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("array construction", &shape, &[data.len()]));
        }
        Ok(Array { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    /// Value of a one-element array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Array {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reverses the last axis.
    pub fn flip_h(&self) -> Result<Self> {
        let (rows, w) = self.trailing_2d("flip_h")?;
        let mut out = self.data.clone();
        for r in 0..rows {
            out[r * w..(r + 1) * w].reverse();
        }
        Ok(Array {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Reverses the second-to-last axis.
    pub fn flip_v(&self) -> Result<Self> {
        let (_, w) = self.trailing_2d("flip_v")?;
        let h = self.shape[self.shape.len() - 2];
        let planes = self.data.len() / (h * w);
        let mut out = Vec::with_capacity(self.data.len());
        for p in 0..planes {
            let plane = &self.data[p * h * w..(p + 1) * h * w];
            for row in plane.chunks_exact(w).rev() {
                out.extend_from_slice(row);
            }
        }
        Ok(Array {
            shape: self.shape.clone(),
            data: out,
        })
    }

    fn trailing_2d(&self, op: &str) -> Result<(usize, usize)> {
        if self.shape.len() < 2 {
            return Err(Error::Contract(format!(
                "{op} needs at least 2 dimensions, got {:?}",
                self.shape
            )));
        }
        let w = self.shape[self.shape.len() - 1];
        Ok((self.data.len() / w, w))
    }
}
