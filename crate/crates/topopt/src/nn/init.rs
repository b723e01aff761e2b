//! Weight initialization.

use super::{Scalar, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

/// He-style fan-in initialization for a `[kh, kw, cin, cout]` kernel:
/// N(0, sqrt(2 / (kh*kw*cin))).
pub fn he_normal<T: Scalar>(weight: &mut Tensor<T>, rng: &mut impl Rng) {
    let shape = weight.shape();
    assert_eq!(shape.len(), 4, "he_normal expects a conv kernel");
    let fan_in = (shape[0] * shape[1] * shape[2]) as f64;
    let std = (2.0 / fan_in).sqrt();
    for w in weight.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = T::fd(z * std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;

    #[test]
    fn scale_tracks_fan_in() {
        let mut rng = stream_rng(1, "init-test", 0);
        let mut w = Tensor::<f64>::zeros(&[3, 3, 16, 32]);
        he_normal(&mut w, &mut rng);
        let var: f64 =
            w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / (3.0 * 3.0 * 16.0);
        assert!((var / expected - 1.0).abs() < 0.1, "var {var} vs {expected}");
    }

    #[test]
    fn deterministic_given_stream() {
        let draw = || {
            let mut rng = stream_rng(42, "init", 7);
            let mut w = Tensor::<f32>::zeros(&[2, 2, 3, 4]);
            he_normal(&mut w, &mut rng);
            w.data().to_vec()
        };
        assert_eq!(draw(), draw());
    }
}
