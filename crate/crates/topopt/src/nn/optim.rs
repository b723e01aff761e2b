//! SGD and Adam parameter updates plus plateau learning-rate decay.

use super::{Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty weight (lambda).
    pub l2_weight: f64,
    pub plateau_patience: u32,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2_weight: 1e-5,
            plateau_patience: 10,
            decay_factor: 0.1,
        }
    }
}

/// Plain gradient step `theta -= lr * g`.
pub fn sgd_step<T: Scalar>(param: &mut Param<T>, lr: f64) {
    let lr = T::fd(lr);
    for (v, &g) in param.value.data_mut().iter_mut().zip(param.grad.data()) {
        *v = *v - lr * g;
    }
}

/// One Adam update at step `t >= 1` with moment state held in the parameter.
/// Note the epsilon sits inside the square root: `theta -= lr * m^ / sqrt(v^ + eps)`.
pub fn adam_step<T: Scalar>(param: &mut Param<T>, cfg: &OptimizerConfig, lr: f64, t: u64) {
    debug_assert!(t >= 1);
    let b1 = T::fd(cfg.beta1);
    let b2 = T::fd(cfg.beta2);
    let one = T::one();
    let corr1 = T::fd(1.0 / (1.0 - cfg.beta1.powi(t as i32)));
    let corr2 = T::fd(1.0 / (1.0 - cfg.beta2.powi(t as i32)));
    let eps = T::fd(cfg.epsilon);
    let lr = T::fd(lr);
    let value = param.value.data_mut();
    let grad = param.grad.data();
    let m = param.m.data_mut();
    let v = param.v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] * corr1;
        let v_hat = v[i] * corr2;
        value[i] = value[i] - lr * m_hat / (v_hat + eps).sqrt();
    }
}

/// Multiplies the learning rate by `factor` whenever the best observed
/// validation loss has not strictly improved for `patience` consecutive
/// epochs (Keras-style counting: the epoch that sets a best resets the
/// counter to zero).
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub learning_rate: f64,
    pub best: Option<f64>,
    pub epochs_since_best: u32,
    pub patience: u32,
    pub factor: f64,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: u32, factor: f64) -> Self {
        Self { learning_rate: initial_lr, best: None, epochs_since_best: 0, patience, factor }
    }

    /// Feeds one epoch's validation loss; returns the learning rate to use
    /// from now on.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        match self.best {
            Some(best) if !(val_loss < best) => {
                self.epochs_since_best += 1;
                if self.epochs_since_best >= self.patience {
                    self.learning_rate *= self.factor;
                    self.epochs_since_best = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.epochs_since_best = 0;
            }
        }
        self.learning_rate
    }
}

/// Learning rate after replaying a full validation-loss history.
pub fn lr_from_history(history: &[f64], initial_lr: f64, patience: u32, factor: f64) -> f64 {
    let mut sched = PlateauScheduler::new(initial_lr, patience, factor);
    let mut lr = initial_lr;
    for &loss in history {
        lr = sched.observe(loss);
    }
    lr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use approx::assert_relative_eq;

    #[test]
    fn sgd_arithmetic() {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![1.0_f64]), true);
        p.grad.data_mut()[0] = 2.0;
        sgd_step(&mut p, 0.1);
        assert_relative_eq!(p.value.data()[0], 0.8, epsilon = 1e-15);
        p.grad.data_mut()[0] = 0.0;
        sgd_step(&mut p, 0.1);
        assert_relative_eq!(p.value.data()[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn sgd_converges_on_quadratic_bowl() {
        // L = 1/2 theta^2, gradient theta; lr below curvature bound contracts.
        let mut p = Param::new(Tensor::from_vec(&[1], vec![5.0_f64]), true);
        let mut prev = 5.0_f64;
        for _ in 0..50 {
            p.grad.data_mut()[0] = p.value.data()[0];
            sgd_step(&mut p, 0.5);
            let cur: f64 = p.value.data()[0];
            assert!(cur.abs() <= prev.abs());
            prev = cur;
        }
        assert!(prev.abs() < 1e-4);
    }

    #[test]
    fn adam_with_zero_gradients_keeps_parameters() {
        let cfg = OptimizerConfig::default();
        let mut p = Param::new(Tensor::from_vec(&[2], vec![1.5_f64, -0.5]), true);
        for t in 1..=5 {
            adam_step(&mut p, &cfg, cfg.learning_rate, t);
        }
        assert_eq!(p.value.data(), &[1.5, -0.5]);
    }

    #[test]
    fn adam_trajectories_are_bit_identical() {
        let cfg = OptimizerConfig::default();
        let run = || {
            let mut p = Param::new(Tensor::from_vec(&[3], vec![0.3_f64, -0.7, 1.1]), true);
            for t in 1..=20 {
                for (i, g) in p.grad.data_mut().iter_mut().enumerate() {
                    *g = ((t as f64) * 0.3 + i as f64).sin();
                }
                adam_step(&mut p, &cfg, cfg.learning_rate, t);
            }
            p.value.data().to_vec()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn strictly_decreasing_history_keeps_learning_rate() {
        let history: Vec<f64> = (0..30).map(|i| 1.0 - i as f64 * 0.01).collect();
        assert_eq!(lr_from_history(&history, 1e-3, 10, 0.1), 1e-3);
    }

    #[test]
    fn ten_flat_epochs_decay_once() {
        // Initial best plus 10 epochs without improvement.
        let history = vec![1.0; 11];
        assert_relative_eq!(lr_from_history(&history, 1e-3, 10, 0.1), 1e-4, epsilon = 1e-19);
    }

    #[test]
    fn nine_flat_epochs_then_improvement_keep_learning_rate() {
        let mut history = vec![1.0; 10];
        history.push(0.5);
        assert_eq!(lr_from_history(&history, 1e-3, 10, 0.1), 1e-3);
    }
}
