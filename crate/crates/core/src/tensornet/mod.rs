//! A small differentiable tensor stack.
//!
//! There is no tape: every op is a forward function paired with an explicit
//! backward function, and layers keep whatever they need for their backward
//! pass in a cache value. Tensors are generic over [`Real`] so the same code
//! runs in `f32` for training and `f64` for gradient checks.

mod gemm;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod wtconv;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use optim::{adamw_step, cosine_lr, AdamW};
pub use wtconv::{WtConvBlock, WtConvCache};

use crate::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Real:
    Float + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, `c: m x n`
    /// with arbitrary element strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (isize, isize),
        b: &[f32],
        sb: (isize, isize),
        beta: f32,
        c: &mut [f32],
        sc: (isize, isize),
    ) {
        gemm::sgemm(m, k, n, a, sa, b, sb, beta, c, sc)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: (isize, isize),
        b: &[f64],
        sb: (isize, isize),
        beta: f64,
        c: &mut [f64],
        sc: (isize, isize),
    ) {
        gemm::dgemm(m, k, n, a, sa, b, sb, beta, c, sc)
    }
}

/// Dense row-major tensor. Activations use `(batch, channels, length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(batch, channels, length)`; panics on other ranks.
    pub fn dims3(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [b, c, l] => (b, c, l),
            [c, l] => (1, c, l),
            _ => panic!("expected a rank-2 or rank-3 tensor, got shape {:?}", self.shape),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Contiguous `(length)` row for `(batch, channel)`.
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let (_, ch, l) = self.dims3();
        let start = (b * ch + c) * l;
        &self.data[start..start + l]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let (_, ch, l) = self.dims3();
        let start = (b * ch + c) * l;
        &mut self.data[start..start + l]
    }
}

/// Debug-build guard against NaN/Inf leaking out of an op.
#[inline]
pub(crate) fn debug_check_finite<T: Real>(t: &Tensor<T>, op: &str) {
    debug_assert!(t.all_finite(), "non-finite values after {op}");
}

/// A trainable tensor with its gradient and optimizer moments.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub(crate) moment1: Tensor<T>,
    pub(crate) moment2: Tensor<T>,
    pub(crate) step: u64,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            moment1: zeros.clone(),
            moment2: zeros,
            value,
            step: 0,
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        Self::new(Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
            moment1: self.moment1.cast(),
            moment2: self.moment2.cast(),
            step: self.step,
        }
    }
}
