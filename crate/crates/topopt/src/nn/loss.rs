//! Pixelwise binary KL divergence and the L2 weight penalty.
//!
//! Each target pixel is treated as a Bernoulli retention probability, so the
//! divergence per pixel is `p log(p/q) + (1-p) log((1-p)/(1-q))` with the
//! `0 log 0 = 0` convention, averaged over all pixels and samples. Its
//! gradient through a sigmoid output head reduces to `(q - p) / N`.

use super::{NnError, Param, Scalar, Tensor};

/// Returns the mean binary KL divergence and its gradient with respect to the
/// output `q`. Errors if any `q` touches 0 or 1 exactly.
pub fn kl_loss<T: Scalar>(
    target: &Tensor<T>,
    output: &Tensor<T>,
) -> Result<(f64, Tensor<T>), NnError> {
    if target.shape() != output.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "target {:?} vs output {:?}",
            target.shape(),
            output.shape()
        )));
    }
    let n = output.len() as f64;
    let mut total = 0.0_f64;
    let mut grad = Tensor::zeros(output.shape());
    let gd = grad.data_mut();
    for (i, (&p, &q)) in target.data().iter().zip(output.data().iter()).enumerate() {
        let (p, q) = (p.as_f64(), q.as_f64());
        debug_assert!((0.0..=1.0).contains(&p), "target outside [0,1]");
        if !(q > 0.0 && q < 1.0) {
            return Err(NnError::NonFinite(format!("output q = {q} at index {i}")));
        }
        let mut term = 0.0;
        if p > 0.0 {
            term += p * (p / q).ln();
        }
        if p < 1.0 {
            term += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        }
        total += term;
        gd[i] = T::fd((-p / q + (1.0 - p) / (1.0 - q)) / n);
    }
    Ok((total / n, grad))
}

/// `lambda * 1/2 * sum(theta^2)` over the given tensors.
pub fn l2_penalty<T: Scalar>(weights: &[&Tensor<T>], lambda: f64) -> f64 {
    let sum: f64 = weights
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&v| {
            let v = v.as_f64();
            v * v
        })
        .sum();
    lambda * 0.5 * sum
}

/// Adds the penalty gradient `lambda * theta` for a decayed parameter.
pub fn add_l2_gradient<T: Scalar>(param: &mut Param<T>, lambda: f64) {
    if !param.decay || lambda == 0.0 {
        return;
    }
    let l = T::fd(lambda);
    for (g, &v) in param.grad.data_mut().iter_mut().zip(param.value.data()) {
        *g = *g + l * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_distributions_have_zero_loss() {
        let p = Tensor::from_vec(&[1, 1, 4, 1], vec![0.2_f64, 0.5, 0.9, 1.0]);
        let (loss, _) = kl_loss(&p, &Tensor::from_vec(&[1, 1, 4, 1], vec![0.2_f64, 0.5, 0.9, 0.9999999])).unwrap();
        assert!(loss.abs() < 1e-6, "loss {loss}");
        let q = Tensor::from_vec(&[1, 1, 4, 1], vec![0.2_f64, 0.5, 0.9, 0.5]);
        let p2 = Tensor::from_vec(&[1, 1, 4, 1], vec![0.2_f64, 0.5, 0.9, 0.9]);
        let (loss2, _) = kl_loss(&p2, &q).unwrap();
        assert!(loss2 > 0.0);
    }

    #[test]
    fn solid_target_against_half_prediction_is_log_two() {
        let p = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0_f64]);
        let q = Tensor::from_vec(&[1, 1, 1, 1], vec![0.5_f64]);
        let (loss, _) = kl_loss(&p, &q).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn saturated_output_is_an_error() {
        let p = Tensor::from_vec(&[1, 1, 1, 1], vec![0.5_f64]);
        let q = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0_f64]);
        assert!(matches!(kl_loss(&p, &q), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn l2_penalty_closed_form() {
        let w = Tensor::from_vec(&[1], vec![2.0_f64]);
        assert_eq!(l2_penalty(&[&w.clone()], 0.0), 0.0);
        assert_eq!(l2_penalty(&[&w], 1.0), 2.0);
        let mut p = Param::new(Tensor::from_vec(&[1], vec![2.0_f64]), true);
        add_l2_gradient(&mut p, 1.0);
        assert_eq!(p.grad.data(), &[2.0]);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_equality() {
        let shapes = [1, 2, 2, 1];
        let p = Tensor::from_vec(&shapes, vec![0.1_f64, 0.6, 0.3, 0.8]);
        let q = Tensor::from_vec(&shapes, vec![0.15, 0.55, 0.3, 0.81]);
        let (loss, _) = kl_loss(&p, &q).unwrap();
        assert!(loss > 0.0);
        let (self_loss, grad) = kl_loss(&p, &p).unwrap();
        assert!(self_loss.abs() < 1e-15);
        // At p == q the gradient of binary KL wrt q vanishes.
        for &g in grad.data() {
            assert!(g.abs() < 1e-12);
        }
    }
}
