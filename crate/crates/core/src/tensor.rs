//! Dense row-major `f64` tensor.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense n-dimensional array in row-major order.
///
/// Gradient bookkeeping lives on the [`Tape`](crate::autodiff::Tape); a
/// `Tensor` is only ever a value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("Tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds for axis {i} ({dim})");
            off = off * dim + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// In-place `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    /// Channel plane `c` of a `[c, h, w]` tensor.
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn slice0(&self, start: usize, end: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        }
    }

    pub fn concat0(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::config("concat of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::dim("concat0", &first.shape, &p.shape));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }

    /// Horizontal flip of the last axis.
    pub fn flip_w(&self) -> Tensor {
        let w = *self.shape.last().unwrap_or(&1);
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_mut(w).zip(self.data.chunks(w)) {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    /// Vertical flip of the second-to-last axis.
    pub fn flip_h(&self) -> Tensor {
        let r = self.rank();
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_mut(h * w).zip(self.data.chunks(h * w)) {
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[(h - 1 - y) * w..(h - y) * w]);
            }
        }
        out
    }

    /// Top-left crop of a `[c, h, w]` tensor.
    pub fn crop(&self, h: usize, w: usize) -> Tensor {
        let (c, sh, sw) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * sh + y) * sw;
                data.extend_from_slice(&self.data[row..row + w]);
            }
        }
        Tensor {
            shape: vec![c, h, w],
            data,
        }
    }

    /// Crop a `[c, h, w]` window starting at `(y0, x0)`.
    pub fn crop_at(&self, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
        let (c, sh, sw) = (self.shape[0], self.shape[1], self.shape[2]);
        debug_assert!(y0 + h <= sh && x0 + w <= sw);
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * sh + y0 + y) * sw + x0;
                data.extend_from_slice(&self.data[row..row + w]);
            }
        }
        Tensor {
            shape: vec![c, h, w],
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn flips_are_involutions() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.flip_w().flip_w(), t);
        assert_eq!(t.flip_h().flip_h(), t);
        assert_eq!(t.flip_w().at(&[1, 2, 0]), t.at(&[1, 2, 3]));
        assert_eq!(t.flip_h().at(&[1, 0, 1]), t.at(&[1, 2, 1]));
    }

    #[test]
    fn crop_at_picks_window() {
        let t = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let c = t.crop_at(1, 2, 2, 2);
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
    }
}
