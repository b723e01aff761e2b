//! 2D convolution (cross-correlation convention) and the 2x2 stride-2
//! transpose convolution used for upsampling.
//!
//! Layout: activations are `[n, h, w, c]`, kernels `[kh, kw, cin, cout]`, all
//! row-major. The inner loops accumulate along the contiguous `cout` axis so
//! the compiler can vectorize them without reassociating float sums, which
//! keeps results independent of SIMD width and thread count.

use super::{NnError, Param, Scalar, Tensor};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding preserving H x W; kernel sides must be odd.
    Same,
    /// No padding; output shrinks by kernel-1.
    Valid,
}

/// Stride-1 convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub padding: Padding,
    input_cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kh: usize, kw: usize, cin: usize, cout: usize, padding: Padding) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[kh, kw, cin, cout]), true),
            bias: Param::new(Tensor::zeros(&[cout]), false),
            padding,
            input_cache: None,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        let [kh, kw, cin, _cout] = kernel_dims(&self.weight.value);
        if x.shape().len() != 4 || x.dim(3) != cin {
            return Err(NnError::ShapeMismatch(format!(
                "conv input {:?} vs kernel {:?}",
                x.shape(),
                self.weight.value.shape()
            )));
        }
        match self.padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(NnError::ConfigError(
                        "same padding requires odd kernel sides".into(),
                    ));
                }
                Ok((x.dim(1), x.dim(2)))
            }
            Padding::Valid => {
                if x.dim(1) < kh || x.dim(2) < kw {
                    return Err(NnError::ShapeMismatch(format!(
                        "kernel {kh}x{kw} does not fit input {:?}",
                        x.shape()
                    )));
                }
                Ok((x.dim(1) - kh + 1, x.dim(2) - kw + 1))
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let (h_out, w_out) = self.check_input(x)?;
        let [kh, kw, cin, cout] = kernel_dims(&self.weight.value);
        let (n, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let (off_y, off_x) = match self.padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Valid => (0, 0),
        };

        let mut out = Tensor::zeros(&[n, h_out, w_out, cout]);
        let xd = x.data();
        let wd = self.weight.value.data();
        let bd = self.bias.value.data();
        out.data_mut()
            .par_chunks_mut(w_out * cout)
            .enumerate()
            .for_each(|(row_idx, row)| {
                let nn = row_idx / h_out;
                let y = row_idx % h_out;
                for xo in 0..w_out {
                    let out_px = &mut row[xo * cout..(xo + 1) * cout];
                    out_px.copy_from_slice(bd);
                    for dy in 0..kh {
                        let iy = (y + dy).wrapping_sub(off_y);
                        if iy >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (xo + dx).wrapping_sub(off_x);
                            if ix >= w {
                                continue;
                            }
                            let in_px = &xd[((nn * h + iy) * w + ix) * cin..][..cin];
                            let wbase = (dy * kw + dx) * cin * cout;
                            for (ci, &a) in in_px.iter().enumerate() {
                                let wrow = &wd[wbase + ci * cout..][..cout];
                                for (o, &wv) in out_px.iter_mut().zip(wrow.iter()) {
                                    *o = *o + a * wv;
                                }
                            }
                        }
                    }
                }
            });

        self.input_cache = if train { Some(x.clone()) } else { None };
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self
            .input_cache
            .as_ref()
            .ok_or_else(|| NnError::ConfigError("backward without cached forward".into()))?;
        let [kh, kw, cin, cout] = kernel_dims(&self.weight.value);
        let (n, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let (h_out, w_out) = (grad_out.dim(1), grad_out.dim(2));
        if grad_out.dim(0) != n || grad_out.dim(3) != cout {
            return Err(NnError::ShapeMismatch(format!(
                "grad {:?} vs kernel {:?}",
                grad_out.shape(),
                self.weight.value.shape()
            )));
        }
        let (off_y, off_x) = match self.padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Valid => (0, 0),
        };

        // Kernel transposed to [kh, kw, cout, cin] so the input-gradient
        // accumulation runs along a contiguous axis.
        let wd = self.weight.value.data();
        let mut wt = vec![T::zero(); wd.len()];
        for dy in 0..kh {
            for dx in 0..kw {
                let base = (dy * kw + dx) * cin * cout;
                for ci in 0..cin {
                    for co in 0..cout {
                        wt[base + co * cin + ci] = wd[base + ci * cout + co];
                    }
                }
            }
        }

        let mut grad_in = Tensor::zeros(&[n, h, w, cin]);
        let gd = grad_out.data();
        let xd = x.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let gid = grad_in.data_mut();
        for nn in 0..n {
            for y in 0..h_out {
                for xo in 0..w_out {
                    let g_px = &gd[((nn * h_out + y) * w_out + xo) * cout..][..cout];
                    for (b, &g) in gb.iter_mut().zip(g_px.iter()) {
                        *b = *b + g;
                    }
                    for dy in 0..kh {
                        let iy = (y + dy).wrapping_sub(off_y);
                        if iy >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (xo + dx).wrapping_sub(off_x);
                            if ix >= w {
                                continue;
                            }
                            let base = ((nn * h + iy) * w + ix) * cin;
                            let in_px = &xd[base..base + cin];
                            let gin_px = &mut gid[base..base + cin];
                            let wbase = (dy * kw + dx) * cin * cout;
                            for (ci, &a) in in_px.iter().enumerate() {
                                let gw_row = &mut gw[wbase + ci * cout..][..cout];
                                for (gwv, &g) in gw_row.iter_mut().zip(g_px.iter()) {
                                    *gwv = *gwv + a * g;
                                }
                            }
                            for (co, &g) in g_px.iter().enumerate() {
                                let wt_row = &wt[wbase + co * cin..][..cin];
                                for (gi, &wv) in gin_px.iter_mut().zip(wt_row.iter()) {
                                    *gi = *gi + g * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// 2x2 stride-2 transpose convolution: exact x2 upsampling, the adjoint of a
/// 2x2 stride-2 convolution with the same kernel.
#[derive(Debug, Clone)]
pub struct TransposeConv2<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input_cache: Option<Tensor<T>>,
}

impl<T: Scalar> TransposeConv2<T> {
    pub fn new(cin: usize, cout: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[2, 2, cin, cout]), true),
            bias: Param::new(Tensor::zeros(&[cout]), false),
            input_cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let [_, _, cin, cout] = kernel_dims(&self.weight.value);
        if x.shape().len() != 4 || x.dim(3) != cin {
            return Err(NnError::ShapeMismatch(format!(
                "transpose-conv input {:?} vs kernel {:?}",
                x.shape(),
                self.weight.value.shape()
            )));
        }
        let (n, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let mut out = Tensor::zeros(&[n, 2 * h, 2 * w, cout]);
        let xd = x.data();
        let wd = self.weight.value.data();
        let bd = self.bias.value.data();
        // Each input row (nn, y) owns output rows 2y and 2y+1.
        out.data_mut()
            .par_chunks_mut(2 * 2 * w * cout)
            .enumerate()
            .for_each(|(row_idx, two_rows)| {
                let nn = row_idx / h;
                let y = row_idx % h;
                for px in two_rows.chunks_mut(cout) {
                    px.copy_from_slice(bd);
                }
                for xo in 0..w {
                    let in_px = &xd[((nn * h + y) * w + xo) * cin..][..cin];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let o = (dy * 2 * w + 2 * xo + dx) * cout;
                            let out_px = &mut two_rows[o..o + cout];
                            let wbase = (dy * 2 + dx) * cin * cout;
                            for (ci, &a) in in_px.iter().enumerate() {
                                let wrow = &wd[wbase + ci * cout..][..cout];
                                for (ov, &wv) in out_px.iter_mut().zip(wrow.iter()) {
                                    *ov = *ov + a * wv;
                                }
                            }
                        }
                    }
                }
            });
        self.input_cache = if train { Some(x.clone()) } else { None };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self
            .input_cache
            .as_ref()
            .ok_or_else(|| NnError::ConfigError("backward without cached forward".into()))?;
        let [_, _, cin, cout] = kernel_dims(&self.weight.value);
        let (n, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        if grad_out.shape() != [n, 2 * h, 2 * w, cout] {
            return Err(NnError::ShapeMismatch(format!(
                "transpose-conv grad {:?} for input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let mut grad_in = Tensor::zeros(&[n, h, w, cin]);
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let gid = grad_in.data_mut();
        for (i, &g) in gd.iter().enumerate() {
            gb[i % cout] = gb[i % cout] + g;
        }
        for nn in 0..n {
            for y in 0..h {
                for xo in 0..w {
                    let base = ((nn * h + y) * w + xo) * cin;
                    let in_px = &xd[base..base + cin];
                    let gin_px = &mut gid[base..base + cin];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let o = ((nn * 2 * h + 2 * y + dy) * 2 * w + 2 * xo + dx) * cout;
                            let g_px = &gd[o..o + cout];
                            let wbase = (dy * 2 + dx) * cin * cout;
                            for ci in 0..cin {
                                let wrow = &wd[wbase + ci * cout..][..cout];
                                let mut acc = T::zero();
                                for (&g, &wv) in g_px.iter().zip(wrow.iter()) {
                                    acc = acc + g * wv;
                                }
                                gin_px[ci] = gin_px[ci] + acc;
                                let a = in_px[ci];
                                let gw_row = &mut gw[wbase + ci * cout..][..cout];
                                for (gwv, &g) in gw_row.iter_mut().zip(g_px.iter()) {
                                    *gwv = *gwv + a * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

fn kernel_dims<T: Scalar>(w: &Tensor<T>) -> [usize; 4] {
    [w.dim(0), w.dim(1), w.dim(2), w.dim(3)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel_is_identity() {
        let mut conv = Conv2d::<f64>::new(1, 1, 1, 1, Padding::Same);
        conv.weight.value.data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 2, 3, 1], (0..6).map(|v| v as f64).collect());
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut conv = Conv2d::<f64>::new(3, 3, 2, 2, Padding::Same);
        conv.bias.value.data_mut().copy_from_slice(&[0.5, -1.0]);
        let x = Tensor::from_vec(&[1, 4, 4, 2], (0..32).map(|v| v as f64 * 0.1).collect());
        let y = conv.forward(&x, false).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.5, -1.0]);
        }
    }

    #[test]
    fn valid_padding_shrinks_output() {
        let mut conv = Conv2d::<f32>::new(2, 2, 3, 4, Padding::Valid);
        let x = Tensor::zeros(&[2, 5, 9, 3]);
        let y = conv.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[2, 4, 8, 4]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut conv = Conv2d::<f32>::new(3, 3, 2, 2, Padding::Same);
        let x = Tensor::zeros(&[1, 4, 4, 3]);
        assert!(matches!(conv.forward(&x, false), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn transpose_conv_of_single_pixel_is_scaled_kernel() {
        let mut tc = TransposeConv2::<f64>::new(1, 1);
        tc.weight.value.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.5]);
        let y = tc.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 1]);
        assert_eq!(y.data(), &[2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn transpose_conv_is_linear() {
        let mut tc = TransposeConv2::<f64>::new(2, 3);
        for (i, w) in tc.weight.value.data_mut().iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        let a = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| (v as f64).cos()).collect());
        let b = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| (v as f64 * 1.3).sin()).collect());
        let mut sum = a.clone();
        for (s, &bv) in sum.data_mut().iter_mut().zip(b.data()) {
            *s += bv;
        }
        let ya = tc.forward(&a, false).unwrap();
        let yb = tc.forward(&b, false).unwrap();
        let ysum = tc.forward(&sum, false).unwrap();
        // Linearity holds up to the bias, which is zero here.
        for ((&va, &vb), &vs) in ya.data().iter().zip(yb.data()).zip(ysum.data()) {
            assert!((va + vb - vs).abs() < 1e-12);
        }
    }
}
