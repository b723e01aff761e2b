//! 2x2 max pooling with stride 2. The backward pass routes each gradient to
//! the window's winning position; ties break to the first position in
//! (dy, dx) scan order.

use super::{NnError, Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Vec<u32>,
    input_shape: Vec<usize>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(
        &mut self,
        x: &Tensor<T>,
        train: bool,
    ) -> Result<Tensor<T>, NnError> {
        if x.shape().len() != 4 {
            return Err(NnError::ShapeMismatch(format!("pool input {:?}", x.shape())));
        }
        let (n, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::OddDimension);
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, ho, wo, c]);
        let xd = x.data();
        let od = out.data_mut();
        let mut argmax = if train { vec![0u32; od.len()] } else { Vec::new() };
        for nn in 0..n {
            for y in 0..ho {
                for xo in 0..wo {
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_at = 0u32;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let at = ((nn * h + 2 * y + dy) * w + 2 * xo + dx) * c + ch;
                                if xd[at] > best {
                                    best = xd[at];
                                    best_at = at as u32;
                                }
                            }
                        }
                        let o = ((nn * ho + y) * wo + xo) * c + ch;
                        od[o] = best;
                        if train {
                            argmax[o] = best_at;
                        }
                    }
                }
            }
        }
        if train {
            self.argmax = argmax;
            self.input_shape = x.shape().to_vec();
        }
        Ok(out)
    }

    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if self.argmax.len() != grad_out.len() {
            return Err(NnError::ShapeMismatch(format!(
                "pool grad {:?} vs cached {} entries",
                grad_out.shape(),
                self.argmax.len()
            )));
        }
        let mut grad_in = Tensor::zeros(&self.input_shape);
        let gid = grad_in.data_mut();
        for (&g, &at) in grad_out.data().iter().zip(self.argmax.iter()) {
            gid[at as usize] = gid[at as usize] + g;
        }
        Ok(grad_in)
    }
}
