//! Minimal dense CNN engine: n-d tensors, the layer set needed by the
//! encoder-decoder model (conv, transpose-conv, batch norm, max-pool,
//! activations), the pixelwise KL loss with L2 regularization, and SGD/Adam
//! with plateau learning-rate decay. Every layer has a hand-written backward
//! pass; the test suite checks all of them against central finite
//! differences in f64.

mod activation;
mod batchnorm;
mod conv;
mod init;
mod loss;
mod optim;
mod pool;


pub use activation::{Relu, Sigmoid};
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, Padding, TransposeConv2};
pub use init::he_normal;
pub use loss::{add_l2_gradient, kl_loss, l2_penalty};
pub use optim::{
    adam_step, lr_from_history, sgd_step, Algorithm, OptimizerConfig, PlateauScheduler,
};
pub use pool::MaxPool2;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch normalization needs a batch of at least 2 in train mode")]
    DegenerateBatch,
    #[error("max-pool input has odd spatial dimensions")]
    OddDimension,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    ConfigError(String),
}

/// Scalar element type of the engine; instantiated with f32 for training and
/// f64 for the gradient-check suites.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
    #[inline]
    fn fd(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
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

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor with its gradient buffer and Adam moment state.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Whether the L2 penalty applies (convolution weights only).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let shape = value.shape.clone();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Concatenates two `[n, h, w, c]` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if a.shape().len() != 4 || b.shape().len() != 4 || a.shape()[..3] != b.shape()[..3] {
        return Err(NnError::ShapeMismatch(format!(
            "concat of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ca, cb) = (a.dim(3), b.dim(3));
    let mut out = Tensor::zeros(&[a.dim(0), a.dim(1), a.dim(2), ca + cb]);
    let pixels = a.len() / ca;
    let out_data = out.data_mut();
    for p in 0..pixels {
        out_data[p * (ca + cb)..p * (ca + cb) + ca].copy_from_slice(&a.data()[p * ca..(p + 1) * ca]);
        out_data[p * (ca + cb) + ca..(p + 1) * (ca + cb)]
            .copy_from_slice(&b.data()[p * cb..(p + 1) * cb]);
    }
    Ok(out)
}

/// Splits a channel-concatenated gradient back into the two halves.
pub fn split_channels<T: Scalar>(
    g: &Tensor<T>,
    ca: usize,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    if g.shape().len() != 4 || g.dim(3) <= ca {
        return Err(NnError::ShapeMismatch(format!(
            "split of {:?} at channel {ca}",
            g.shape()
        )));
    }
    let cb = g.dim(3) - ca;
    let mut a = Tensor::zeros(&[g.dim(0), g.dim(1), g.dim(2), ca]);
    let mut b = Tensor::zeros(&[g.dim(0), g.dim(1), g.dim(2), cb]);
    let pixels = g.len() / (ca + cb);
    for p in 0..pixels {
        a.data_mut()[p * ca..(p + 1) * ca]
            .copy_from_slice(&g.data()[p * (ca + cb)..p * (ca + cb) + ca]);
        b.data_mut()[p * cb..(p + 1) * cb]
            .copy_from_slice(&g.data()[p * (ca + cb) + ca..(p + 1) * (ca + cb)]);
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrips() {
        let a = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect());
        let b = Tensor::from_vec(&[1, 2, 2, 3], (100..112).map(|v| v as f64).collect());
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[1, 2, 2, 5]);
        let (a2, b2) = split_channels(&cat, 2).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn concat_rejects_mismatched_spatial_shapes() {
        let a = Tensor::<f32>::zeros(&[1, 2, 2, 1]);
        let b = Tensor::<f32>::zeros(&[1, 3, 2, 1]);
        assert!(concat_channels(&a, &b).is_err());
    }
}
