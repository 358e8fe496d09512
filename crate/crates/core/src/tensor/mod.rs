//! Dense NCHW tensors and the handful of neural primitives the upsamplers
//! are built from.
//!
//! Everything is computed in `f64`. [`DType`] records the storage precision a
//! tensor was read with (or should be written with); it does not change how
//! kernels evaluate.

mod ops;
mod rng;

pub use ops::*;
pub use rng::Rng;

use crate::error::{Error, Result};

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Extents of a rank-4 tensor in (batch, channels, height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_spatial(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Immutable rank-4 array, contiguous in batch, channel, row, column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.dims().contains(&0) {
            return Err(Error::dimension("tensor", "all extents >= 1", shape.dims()));
        }
        if data.len() != shape.numel() {
            return Err(Error::dimension(
                "tensor",
                format!("{} scalars for {shape}", shape.numel()),
                data.len(),
            ));
        }
        Ok(Tensor {
            shape,
            dtype: DType::F64,
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        assert!(
            !shape.dims().contains(&0),
            "tensor extents must be >= 1, got {shape}"
        );
        Tensor {
            shape,
            dtype: DType::F64,
            data: vec![value; shape.numel()],
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.uniform(lo, hi)).collect();
        Tensor {
            shape,
            dtype: DType::F64,
            data,
        }
    }

    /// Rounds every element to the nearest `f32` when `dtype` is [`DType::F32`].
    pub fn with_dtype(mut self, dtype: DType) -> Self {
        if dtype == DType::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
        self.dtype = dtype;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    /// One `h*w` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// Contiguous `c*h*w` block for one batch item.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            dtype: self.dtype,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dimension("zip_map", self.shape, other.shape));
        }
        Ok(Tensor {
            shape: self.shape,
            dtype: self.dtype,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Stacks batch items with identical (c, h, w) extents.
    pub fn concat_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("concat_batch needs at least one tensor"))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::dimension("concat_batch", first, t.shape));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape { n, ..first }, data)
    }

    /// Extracts batch item `n` as a tensor with batch extent 1.
    pub fn batch_item(&self, n: usize) -> Tensor {
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            dtype: self.dtype,
            data: self.item(n).to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_wrong_length() {
        assert!(Tensor::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
        assert!(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn offsets_are_nchw() {
        let shape = Shape::new(2, 3, 4, 5);
        let t = Tensor::from_vec(shape, (0..shape.numel()).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(1, 2, 3, 4), (shape.numel() - 1) as f64);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.at(0, 0, 1, 0), 5.0);
    }

    #[test]
    fn f32_storage_rounds() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.1]).unwrap();
        let t = t.with_dtype(DType::F32);
        assert_eq!(t.as_slice()[0], 0.1f32 as f64);
    }

    #[test]
    fn batch_roundtrip() {
        let mut rng = Rng::seed(3);
        let a = Tensor::uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(Shape::new(1, 2, 3, 3), -1.0, 1.0, &mut rng);
        let ab = Tensor::concat_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.shape().n, 2);
        assert_eq!(ab.batch_item(0), a);
        assert_eq!(ab.batch_item(1), b);
    }
}
