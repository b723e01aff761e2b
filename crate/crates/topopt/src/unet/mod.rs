//! The encoder-decoder surrogate: a stem conv maps the `(H+1) x (W+1)` node
//! grid onto the `H x W` element grid, three encoder blocks halve the
//! resolution each, two bridge convs generate feature maps, and three decoder
//! blocks restore the shape, each concatenating the matching encoder output
//! before upsampling. The head concatenates the stem features and reduces to
//! a single sigmoid channel of retention probabilities.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointError};
pub use train::{
    train_epochs, EpochRecord, TrainConfig, TrainError, TrainEvent, TrainState,
};

use crate::dataset::InputTensor;
use crate::fem::DensityMap;
use crate::nn::{
    concat_channels, he_normal, split_channels, BatchNorm2d, Conv2d, MaxPool2, NnError, Padding,
    Param, Relu, Scalar, Sigmoid, Tensor, TransposeConv2,
};
use crate::util::stream_rng;

/// Channel widths and input layout of the model. Widths are configuration,
/// not constants; the defaults give a desk-scale model of ~190k parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    /// 6-channel input (ux, uy, eps_x, eps_y, gamma_xy, vf) or the 3-channel
    /// ablation (ux, uy, vf).
    pub input_channels: usize,
    pub stem_width: usize,
    pub encoder_widths: [usize; 3],
    pub bridge_width: usize,
    pub decoder_widths: [usize; 3],
    pub head_widths: Vec<usize>,
    /// Standardize inputs per channel with training-split statistics.
    pub standardize: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            input_channels: 6,
            stem_width: 16,
            encoder_widths: [16, 32, 64],
            bridge_width: 64,
            decoder_widths: [32, 16, 16],
            head_widths: vec![8],
            standardize: false,
        }
    }
}

impl ArchitectureConfig {
    pub fn with_channels(input_channels: usize) -> Self {
        Self { input_channels, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_channels != 3 && self.input_channels != 6 {
            return Err(NnError::ConfigError(format!(
                "input channels must be 3 or 6, got {}",
                self.input_channels
            )));
        }
        let widths = self
            .encoder_widths
            .iter()
            .chain(self.decoder_widths.iter())
            .chain(self.head_widths.iter())
            .chain([&self.stem_width, &self.bridge_width]);
        for &w in widths {
            if w == 0 {
                return Err(NnError::ConfigError("zero channel width".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: Relu<T>,
    pool: MaxPool2,
}

impl<T: Scalar> EncoderBlock<T> {
    fn new(cin: usize, width: usize) -> Self {
        Self {
            conv1: Conv2d::new(3, 3, cin, width, Padding::Same),
            bn1: BatchNorm2d::new(width),
            relu1: Relu::new(),
            conv2: Conv2d::new(3, 3, width, width, Padding::Same),
            bn2: BatchNorm2d::new(width),
            relu2: Relu::new(),
            pool: MaxPool2::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let x = self.conv1.forward(x, train)?;
        let x = self.bn1.forward(&x, train)?;
        let x = self.relu1.forward(&x, train);
        let x = self.conv2.forward(&x, train)?;
        let x = self.bn2.forward(&x, train)?;
        let x = self.relu2.forward(&x, train);
        self.pool.forward(&x, train)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.pool.backward(grad)?;
        let g = self.relu2.backward(&g)?;
        let g = self.bn2.backward(&g)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        self.conv1.backward(&g)
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock<T> {
    /// Channels contributed by the decoder path; the skip occupies the rest.
    path_channels: usize,
    tconv: TransposeConv2<T>,
    bn: BatchNorm2d<T>,
    relu1: Relu<T>,
    conv: Conv2d<T>,
    relu2: Relu<T>,
}

impl<T: Scalar> DecoderBlock<T> {
    fn new(path_channels: usize, skip_channels: usize, width: usize) -> Self {
        Self {
            path_channels,
            tconv: TransposeConv2::new(path_channels + skip_channels, width),
            bn: BatchNorm2d::new(width),
            relu1: Relu::new(),
            conv: Conv2d::new(3, 3, width, width, Padding::Same),
            relu2: Relu::new(),
        }
    }

    fn forward(
        &mut self,
        x: &Tensor<T>,
        skip: &Tensor<T>,
        train: bool,
    ) -> Result<Tensor<T>, NnError> {
        let cat = concat_channels(x, skip)?;
        let up = self.tconv.forward(&cat, train)?;
        let up = self.bn.forward(&up, train)?;
        let up = self.relu1.forward(&up, train);
        let out = self.conv.forward(&up, train)?;
        Ok(self.relu2.forward(&out, train))
    }

    /// Returns gradients for (decoder path input, skip input).
    fn backward(&mut self, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        let g = self.relu2.backward(grad)?;
        let g = self.conv.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn.backward(&g)?;
        let g = self.tconv.backward(&g)?;
        split_channels(&g, self.path_channels)
    }
}

#[derive(Debug, Clone)]
struct HeadBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

/// The full surrogate model.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ArchitectureConfig,
    /// Per-channel (mean, std) applied to inputs when standardization is on.
    pub input_norm: Option<(Vec<f64>, Vec<f64>)>,
    stem: Conv2d<T>,
    stem_relu: Relu<T>,
    enc: Vec<EncoderBlock<T>>,
    bridge1: Conv2d<T>,
    bridge_relu1: Relu<T>,
    bridge2: Conv2d<T>,
    bridge_relu2: Relu<T>,
    dec: Vec<DecoderBlock<T>>,
    head: Vec<HeadBlock<T>>,
    final_conv: Conv2d<T>,
    sigmoid: Sigmoid<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network with He-initialized kernels drawn from the `init`
    /// stream of `seed`.
    pub fn new(config: ArchitectureConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let [e1, e2, e3] = config.encoder_widths;
        let [d1, d2, d3] = config.decoder_widths;
        let stem = Conv2d::new(2, 2, config.input_channels, config.stem_width, Padding::Valid);
        let enc = vec![
            EncoderBlock::new(config.stem_width, e1),
            EncoderBlock::new(e1, e2),
            EncoderBlock::new(e2, e3),
        ];
        let bridge1 = Conv2d::new(3, 3, e3, config.bridge_width, Padding::Same);
        let bridge2 = Conv2d::new(3, 3, config.bridge_width, config.bridge_width, Padding::Same);
        let dec = vec![
            DecoderBlock::new(config.bridge_width, e3, d1),
            DecoderBlock::new(d1, e2, d2),
            DecoderBlock::new(d2, e1, d3),
        ];
        let mut head = Vec::new();
        let mut c = d3 + config.stem_width;
        for &w in &config.head_widths {
            head.push(HeadBlock {
                conv: Conv2d::new(3, 3, c, w, Padding::Same),
                bn: BatchNorm2d::new(w),
                relu: Relu::new(),
            });
            c = w;
        }
        let final_conv = Conv2d::new(3, 3, c, 1, Padding::Same);

        let mut model = Self {
            config,
            input_norm: None,
            stem,
            stem_relu: Relu::new(),
            enc,
            bridge1,
            bridge_relu1: Relu::new(),
            bridge2,
            bridge_relu2: Relu::new(),
            dec,
            head,
            final_conv,
            sigmoid: Sigmoid::new(),
        };
        let mut rng = stream_rng(seed, "init", 0);
        model.for_each_param(|p| {
            if p.value.shape().len() == 4 {
                he_normal(&mut p.value, &mut rng);
            }
        });
        Ok(model)
    }

    /// Visits every trainable parameter in a fixed canonical order.
    pub fn for_each_param(&mut self, mut f: impl FnMut(&mut Param<T>)) {
        f(&mut self.stem.weight);
        f(&mut self.stem.bias);
        for b in &mut self.enc {
            f(&mut b.conv1.weight);
            f(&mut b.conv1.bias);
            f(&mut b.bn1.gamma);
            f(&mut b.bn1.beta);
            f(&mut b.conv2.weight);
            f(&mut b.conv2.bias);
            f(&mut b.bn2.gamma);
            f(&mut b.bn2.beta);
        }
        f(&mut self.bridge1.weight);
        f(&mut self.bridge1.bias);
        f(&mut self.bridge2.weight);
        f(&mut self.bridge2.bias);
        for b in &mut self.dec {
            f(&mut b.tconv.weight);
            f(&mut b.tconv.bias);
            f(&mut b.bn.gamma);
            f(&mut b.bn.beta);
            f(&mut b.conv.weight);
            f(&mut b.conv.bias);
        }
        for b in &mut self.head {
            f(&mut b.conv.weight);
            f(&mut b.conv.bias);
            f(&mut b.bn.gamma);
            f(&mut b.bn.beta);
        }
        f(&mut self.final_conv.weight);
        f(&mut self.final_conv.bias);
    }

    /// Read-only parameter visitor, same order as [`for_each_param`].
    pub fn for_each_param_ref(&self, mut f: impl FnMut(&Param<T>)) {
        f(&self.stem.weight);
        f(&self.stem.bias);
        for b in &self.enc {
            f(&b.conv1.weight);
            f(&b.conv1.bias);
            f(&b.bn1.gamma);
            f(&b.bn1.beta);
            f(&b.conv2.weight);
            f(&b.conv2.bias);
            f(&b.bn2.gamma);
            f(&b.bn2.beta);
        }
        f(&self.bridge1.weight);
        f(&self.bridge1.bias);
        f(&self.bridge2.weight);
        f(&self.bridge2.bias);
        for b in &self.dec {
            f(&b.tconv.weight);
            f(&b.tconv.bias);
            f(&b.bn.gamma);
            f(&b.bn.beta);
            f(&b.conv.weight);
            f(&b.conv.bias);
        }
        for b in &self.head {
            f(&b.conv.weight);
            f(&b.conv.bias);
            f(&b.bn.gamma);
            f(&b.bn.beta);
        }
        f(&self.final_conv.weight);
        f(&self.final_conv.bias);
    }

    /// Visits every batch-norm layer in a fixed canonical order.
    pub fn for_each_batchnorm(&mut self, mut f: impl FnMut(&mut BatchNorm2d<T>)) {
        for b in &mut self.enc {
            f(&mut b.bn1);
            f(&mut b.bn2);
        }
        for b in &mut self.dec {
            f(&mut b.bn);
        }
        for b in &mut self.head {
            f(&mut b.bn);
        }
    }

    pub fn for_each_batchnorm_ref(&self, mut f: impl FnMut(&BatchNorm2d<T>)) {
        for b in &self.enc {
            f(&b.bn1);
            f(&b.bn2);
        }
        for b in &self.dec {
            f(&b.bn);
        }
        for b in &self.head {
            f(&b.bn);
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param_ref(|p| n += p.value.len());
        n
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(|p| p.zero_grad());
    }

    fn normalize(&self, x: &Tensor<T>) -> Tensor<T> {
        match &self.input_norm {
            None => x.clone(),
            Some((mean, std)) => {
                let c = self.config.input_channels;
                let mut out = x.clone();
                for px in out.data_mut().chunks_exact_mut(c) {
                    for ch in 0..c {
                        px[ch] = (px[ch] - T::fd(mean[ch])) / T::fd(std[ch]);
                    }
                }
                out
            }
        }
    }

    /// Forward pass on a `[n, H+1, W+1, C]` batch; returns `[n, H, W, 1]`
    /// probabilities.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        if x.shape().len() != 4 || x.dim(3) != self.config.input_channels {
            return Err(NnError::ShapeMismatch(format!(
                "model input {:?}, expected {} channels",
                x.shape(),
                self.config.input_channels
            )));
        }
        let x = self.normalize(x);
        let s = self.stem.forward(&x, train)?;
        let s = self.stem_relu.forward(&s, train);
        let (h, w) = (s.dim(1), s.dim(2));
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "element grid {h}x{w} must be divisible by 8"
            )));
        }
        let e1 = self.enc[0].forward(&s, train)?;
        let e2 = self.enc[1].forward(&e1, train)?;
        let e3 = self.enc[2].forward(&e2, train)?;
        let b = self.bridge1.forward(&e3, train)?;
        let b = self.bridge_relu1.forward(&b, train);
        let b = self.bridge2.forward(&b, train)?;
        let b = self.bridge_relu2.forward(&b, train);
        let d1 = self.dec[0].forward(&b, &e3, train)?;
        let d2 = self.dec[1].forward(&d1, &e2, train)?;
        let d3 = self.dec[2].forward(&d2, &e1, train)?;
        let mut hcur = concat_channels(&d3, &s)?;
        for hb in &mut self.head {
            let t = hb.conv.forward(&hcur, train)?;
            let t = hb.bn.forward(&t, train)?;
            hcur = hb.relu.forward(&t, train);
        }
        let logits = self.final_conv.forward(&hcur, train)?;
        Ok(self.sigmoid.forward(&logits, train))
    }

    /// Backward pass from the loss gradient w.r.t. the output probabilities.
    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.sigmoid.backward(grad_output)?;
        let mut g = self.final_conv.backward(&g)?;
        for hb in self.head.iter_mut().rev() {
            let t = hb.relu.backward(&g)?;
            let t = hb.bn.backward(&t)?;
            g = hb.conv.backward(&t)?;
        }
        let (gd3, gs_head) = split_channels(&g, self.config.decoder_widths[2])?;
        let (gd2, ge1_skip) = self.dec[2].backward(&gd3)?;
        let (gd1, ge2_skip) = self.dec[1].backward(&gd2)?;
        let (gb, ge3_skip) = self.dec[0].backward(&gd1)?;
        let gb = self.bridge_relu2.backward(&gb)?;
        let gb = self.bridge2.backward(&gb)?;
        let gb = self.bridge_relu1.backward(&gb)?;
        let mut ge3 = self.bridge1.backward(&gb)?;
        add_into(&mut ge3, &ge3_skip);
        let mut ge2 = self.enc[2].backward(&ge3)?;
        add_into(&mut ge2, &ge2_skip);
        let mut ge1 = self.enc[1].backward(&ge2)?;
        add_into(&mut ge1, &ge1_skip);
        let mut gs = self.enc[0].backward(&ge1)?;
        add_into(&mut gs, &gs_head);
        let gs = self.stem_relu.backward(&gs)?;
        self.stem.backward(&gs)
    }

    /// Sum of squared decayed weights times lambda/2 (the loss penalty term).
    pub fn l2_value(&self, lambda: f64) -> f64 {
        let mut sum = 0.0;
        self.for_each_param_ref(|p| {
            if p.decay {
                sum += p.value.data().iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        });
        lambda * 0.5 * sum
    }
}

fn add_into<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = *d + s;
    }
}

/// Inference on a single input tensor; output is a probability map on the
/// element grid.
pub fn predict(model: &mut Model<f32>, input: &InputTensor) -> Result<DensityMap, NnError> {
    if input.channels() != model.config.input_channels {
        return Err(NnError::ShapeMismatch(format!(
            "input has {} channels, model wants {}",
            input.channels(),
            model.config.input_channels
        )));
    }
    let x = Tensor::from_vec(
        &[1, input.rows(), input.cols(), input.channels()],
        input.data().to_vec(),
    );
    let y = model.forward(&x, false)?;
    let (h, w) = (y.dim(1), y.dim(2));
    let values: Vec<f64> = y.data().iter().map(|&v| f64::from(v).clamp(1e-7, 1.0 - 1e-7)).collect();
    let mesh = crate::fem::MeshSpec::new(w, h).map_err(|e| NnError::ConfigError(e.to_string()))?;
    DensityMap::from_values(&mesh, values.iter().map(|&v| v.max(crate::fem::DENSITY_MIN)).collect())
        .map_err(|e| NnError::ConfigError(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_config() -> ArchitectureConfig {
        ArchitectureConfig {
            input_channels: 6,
            stem_width: 2,
            encoder_widths: [2, 4, 8],
            bridge_width: 8,
            decoder_widths: [4, 2, 2],
            head_widths: vec![2],
            standardize: false,
        }
    }

    #[test]
    fn forward_restores_element_grid_shape() {
        let mut model = Model::<f32>::new(mini_config(), 3).unwrap();
        let x = Tensor::zeros(&[2, 9, 17, 6]);
        let y = model.forward(&x, true).unwrap();
        assert_eq!(y.shape(), &[2, 8, 16, 1]);
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn default_geometry_maps_node_grid_to_element_grid() {
        // 41x81 node input -> encoder trace 40x80, 20x40, 10x20, 5x10 ->
        // decoded back to 40x80.
        let mut model = Model::<f32>::new(ArchitectureConfig::default(), 0).unwrap();
        let x = Tensor::zeros(&[1, 41, 81, 6]);
        let y = model.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[1, 40, 80, 1]);
        for &v in y.data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn indivisible_grid_is_rejected() {
        let mut model = Model::<f32>::new(mini_config(), 3).unwrap();
        let x = Tensor::zeros(&[2, 7, 17, 6]);
        assert!(model.forward(&x, false).is_err());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut model = Model::<f32>::new(mini_config(), 3).unwrap();
        let x = Tensor::zeros(&[1, 9, 17, 3]);
        assert!(model.forward(&x, false).is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = ArchitectureConfig::default();
        let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
        let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
        let bn = |c: usize| 2 * c;
        let [e1, e2, e3] = cfg.encoder_widths;
        let [d1, d2, d3] = cfg.decoder_widths;
        let mut expected = conv(2, cfg.input_channels, cfg.stem_width);
        for (cin, w) in [(cfg.stem_width, e1), (e1, e2), (e2, e3)] {
            expected += conv(3, cin, w) + bn(w) + conv(3, w, w) + bn(w);
        }
        expected += conv(3, e3, cfg.bridge_width);
        expected += conv(3, cfg.bridge_width, cfg.bridge_width);
        for (cin, skip, w) in [(cfg.bridge_width, e3, d1), (d1, e2, d2), (d2, e1, d3)] {
            expected += conv(2, cin + skip, w) + bn(w) + conv(3, w, w);
        }
        let mut c = d3 + cfg.stem_width;
        for &w in &cfg.head_widths {
            expected += conv(3, c, w) + bn(w);
            c = w;
        }
        expected += conv(3, c, 1);
        assert_eq!(model.parameter_count(), expected);
    }

    #[test]
    fn zeroing_skip_weights_changes_output() {
        // The skip tensor enters each decoder block through the trailing
        // input channels of its transpose conv; zeroing those weight slices
        // is equivalent to zeroing the skip tensor itself.
        let mut model = Model::<f64>::new(mini_config(), 11).unwrap();
        let x = Tensor::from_vec(
            &[1, 9, 17, 6],
            (0..9 * 17 * 6).map(|i| ((i as f64) * 0.13).sin()).collect(),
        );
        let base = model.forward(&x, false).unwrap();
        for block in 0..3 {
            let mut ablated = model.clone();
            let b = &mut ablated.dec[block];
            let path = b.path_channels;
            let [_, _, cin, cout] = [
                b.tconv.weight.value.dim(0),
                b.tconv.weight.value.dim(1),
                b.tconv.weight.value.dim(2),
                b.tconv.weight.value.dim(3),
            ];
            let wd = b.tconv.weight.value.data_mut();
            for dydx in 0..4 {
                for ci in path..cin {
                    for co in 0..cout {
                        wd[(dydx * cin + ci) * cout + co] = 0.0;
                    }
                }
            }
            let y = ablated.forward(&x, false).unwrap();
            let diff: f64 = y
                .data()
                .iter()
                .zip(base.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff > 1e-9, "skip {block} had no influence on the output");
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let mut model = Model::<f32>::new(mini_config(), 5).unwrap();
        let x = Tensor::from_vec(
            &[1, 9, 17, 6],
            (0..9 * 17 * 6).map(|i| ((i as f32) * 0.31).cos()).collect(),
        );
        let a = model.forward(&x, false).unwrap();
        let b = model.forward(&x, false).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
