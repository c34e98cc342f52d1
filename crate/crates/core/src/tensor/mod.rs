//! Dense 4-D tensors over a generic real scalar.

pub mod gemm;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
pub use gemm::{Gemm, MatMut, MatRef};

/// Scalar element of the engine. Implemented for `f32` (default) and `f64`
/// (used where gradient checks need headroom).
pub trait Real: Float + FromPrimitive + ToPrimitive + Gemm + Sum + Debug + Default + Send + Sync + 'static {
    const NAME: &'static str;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Shape of a tensor: (batch, channel, height, width).
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// Row-major (NCHW) tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("buffer of {} elements does not fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); numel(&shape)] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; numel(&shape)] }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Self { shape, data: (0..numel(&shape)).map(&mut f).collect() }
    }

    /// Convert from another precision.
    pub fn cast<U: Real>(other: &Tensor<U>) -> Self {
        Self { shape: other.shape, data: other.data.iter().map(|v| T::lit(v.to_f64_lossy())).collect() }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Same buffer under a new shape of equal element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len().max(1)).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Integer tensor produced by index-selecting operations (e.g. top-k).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexTensor {
    pub shape: Shape,
    pub data: Vec<usize>,
}

impl IndexTensor {
    pub fn row(&self, row: usize) -> &[usize] {
        let k = self.shape[3];
        &self.data[row * k..(row + 1) * k]
    }

    pub fn rows(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }
}
