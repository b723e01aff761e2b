//! Per-channel batch normalization over `[n, h, w, c]` activations with
//! running statistics for inference.

use super::{NnError, Param, Scalar, Tensor};

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(T::one());
        Self {
            gamma: Param::new(gamma, false),
            beta: Param::new(Tensor::zeros(&[channels]), false),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.99,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.shape().len() != 4 || x.dim(3) != self.channels() {
            return Err(NnError::ShapeMismatch(format!(
                "batch-norm input {:?} with {} channels",
                x.shape(),
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let c = self.channels();
        let m = x.len() / c;
        let mut out = Tensor::zeros(x.shape());
        if train {
            if x.dim(0) < 2 {
                return Err(NnError::DegenerateBatch);
            }
            let mut mean = vec![T::zero(); c];
            for px in x.data().chunks_exact(c) {
                for (acc, &v) in mean.iter_mut().zip(px.iter()) {
                    *acc = *acc + v;
                }
            }
            let inv_m = T::fd(1.0 / m as f64);
            for v in &mut mean {
                *v = *v * inv_m;
            }
            let mut var = vec![T::zero(); c];
            for px in x.data().chunks_exact(c) {
                for ((acc, &v), &mu) in var.iter_mut().zip(px.iter()).zip(mean.iter()) {
                    let d = v - mu;
                    *acc = *acc + d * d;
                }
            }
            for v in &mut var {
                *v = *v * inv_m;
            }
            let eps = T::fd(self.eps);
            let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

            let mut xhat = Tensor::zeros(x.shape());
            let gd = self.gamma.value.data();
            let bd = self.beta.value.data();
            for (xh_px, (x_px, o_px)) in xhat
                .data_mut()
                .chunks_exact_mut(c)
                .zip(x.data().chunks_exact(c).zip(out.data_mut().chunks_exact_mut(c)))
            {
                for ch in 0..c {
                    let h = (x_px[ch] - mean[ch]) * inv_std[ch];
                    xh_px[ch] = h;
                    o_px[ch] = gd[ch] * h + bd[ch];
                }
            }
            let mom = T::fd(self.momentum);
            let one_m = T::one() - mom;
            for ch in 0..c {
                self.running_mean[ch] = mom * self.running_mean[ch] + one_m * mean[ch];
                self.running_var[ch] = mom * self.running_var[ch] + one_m * var[ch];
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            let eps = T::fd(self.eps);
            let gd = self.gamma.value.data();
            let bd = self.beta.value.data();
            let scale: Vec<T> = (0..c)
                .map(|ch| gd[ch] * (self.running_var[ch] + eps).sqrt().recip())
                .collect();
            let shift: Vec<T> =
                (0..c).map(|ch| bd[ch] - scale[ch] * self.running_mean[ch]).collect();
            for (o_px, x_px) in out.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
                for ch in 0..c {
                    o_px[ch] = scale[ch] * x_px[ch] + shift[ch];
                }
            }
            self.cache = None;
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::ConfigError("backward without train-mode forward".into()))?;
        self.check_input(grad_out)?;
        let c = self.channels();
        let m = grad_out.len() / c;

        let mut sum_g = vec![T::zero(); c];
        let mut sum_g_xhat = vec![T::zero(); c];
        for (g_px, xh_px) in grad_out.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c))
        {
            for ch in 0..c {
                sum_g[ch] = sum_g[ch] + g_px[ch];
                sum_g_xhat[ch] = sum_g_xhat[ch] + g_px[ch] * xh_px[ch];
            }
        }
        for ch in 0..c {
            let g = self.gamma.grad.data_mut();
            g[ch] = g[ch] + sum_g_xhat[ch];
            let b = self.beta.grad.data_mut();
            b[ch] = b[ch] + sum_g[ch];
        }

        let inv_m = T::fd(1.0 / m as f64);
        let gd = self.gamma.value.data();
        let mut grad_in = Tensor::zeros(grad_out.shape());
        for ((gi_px, g_px), xh_px) in grad_in
            .data_mut()
            .chunks_exact_mut(c)
            .zip(grad_out.data().chunks_exact(c))
            .zip(cache.xhat.data().chunks_exact(c))
        {
            for ch in 0..c {
                let centered =
                    g_px[ch] - inv_m * sum_g[ch] - xh_px[ch] * inv_m * sum_g_xhat[ch];
                gi_px[ch] = gd[ch] * cache.inv_std[ch] * centered;
            }
        }
        Ok(grad_in)
    }
}
