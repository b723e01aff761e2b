//! Elementwise activations.

use super::{NnError, Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    input_cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { input_cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.input_cache = if train { Some(x.clone()) } else { None };
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self
            .input_cache
            .as_ref()
            .ok_or_else(|| NnError::ConfigError("backward without cached forward".into()))?;
        let mut g = grad_out.clone();
        for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
            if xv <= T::zero() {
                *gv = T::zero();
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    output_cache: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output_cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        // Clamp to the largest representable open interval so the output is
        // strictly inside (0, 1) even where the exponential saturates.
        let eps = T::epsilon();
        let hi = T::one() - eps;
        let y = x.map(|v| (T::one() / (T::one() + (-v).exp())).clamp(eps, hi));
        self.output_cache = if train { Some(y.clone()) } else { None };
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = self
            .output_cache
            .as_ref()
            .ok_or_else(|| NnError::ConfigError("backward without cached forward".into()))?;
        let mut g = grad_out.clone();
        for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
            *gv = *gv * yv * (T::one() - yv);
        }
        Ok(g)
    }
}
