use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Floating-point element type of the network. `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Real:
    Copy
    + Default
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
        }
    };
}
impl_real!(f32);
impl_real!(f64);

/// One sample's feature maps, C × D × H × W.
#[derive(Clone, Debug, PartialEq)]
pub struct Feat<T> {
    pub c: usize,
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Real> Feat<T> {
    pub fn zeros(c: usize, dims: [usize; 3]) -> Self {
        Feat { c, dims, data: vec![T::ZERO; c * dims.iter().product::<usize>()] }
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Batch tensor, B × C × D × H × W.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 5],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: [usize; 5], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || data.is_empty() {
            return Err(Error::Shape(format!("tensor {shape:?} with {} elements", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor { shape, data: vec![T::ZERO; shape.iter().product()] }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, b: usize) -> Feat<T> {
        let n = self.sample_len();
        Feat { c: self.shape[1], dims: self.spatial(), data: self.data[b * n..(b + 1) * n].to_vec() }
    }

    pub fn from_samples(samples: Vec<Feat<T>>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (c, dims) = (first.c, first.dims);
        if samples.iter().any(|s| s.c != c || s.dims != dims) {
            return Err(Error::Shape("batch samples differ in shape".into()));
        }
        let shape = [samples.len(), c, dims[0], dims[1], dims[2]];
        let mut data = Vec::with_capacity(shape.iter().product());
        for s in samples {
            data.extend(s.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Value at (b, c, z, y, x).
    pub fn at(&self, idx: [usize; 5]) -> T {
        let s = self.shape;
        self.data[(((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]) * s[4] + idx[4]]
    }
}
