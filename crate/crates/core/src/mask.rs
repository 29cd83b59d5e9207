use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Per-pixel validity of ground truth, row-major `h × w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if h * w != data.len() || h == 0 || w == 0 {
            return Err(Error::shape("mask", &[h, w], &[data.len()]));
        }
        Ok(Mask { h, w, data })
    }

    pub fn all(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![true; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.h, self.w]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    /// 1.0 where valid, 0.0 elsewhere.
    pub fn to_array(&self) -> Array {
        Array::from_fn(&[self.h, self.w], |i| if self.data[i] { 1.0 } else { 0.0 })
    }

    /// Checks that `a` is an `h × w` map matching this mask.
    pub fn check(&self, ctx: &str, a: &Array) -> Result<()> {
        if a.shape() != [self.h, self.w] {
            return Err(Error::shape(ctx, a.shape(), &[self.h, self.w]));
        }
        Ok(())
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Mask {
        let mut data = Vec::with_capacity(h * w);
        for y in top..top + h {
            data.extend_from_slice(&self.data[y * self.w + left..y * self.w + left + w]);
        }
        Mask { h, w, data }
    }

    pub fn flip_h(&self) -> Mask {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.w) {
            row.reverse();
        }
        Mask {
            h: self.h,
            w: self.w,
            data,
        }
    }
}
