//! Training loop: Adam (or SGD) on the KL + L2 objective over mini-batches,
//! per-epoch validation, plateau learning-rate decay, and resumable state.

use super::Model;
use crate::dataset::{Dataset, DatasetSplit};
use crate::nn::{
    add_l2_gradient, adam_step, kl_loss, sgd_step, Algorithm, NnError, OptimizerConfig,
    PlateauScheduler, Scalar,
};
use crate::util::stream_rng;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch} batch {batch} (max |grad| = {max_abs_grad})")]
    NonFiniteLoss { epoch: u32, batch: usize, max_abs_grad: f64 },
    #[error("dataset/model mismatch: {0}")]
    Data(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, optimizer: OptimizerConfig::default() }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_kl: f64,
    pub train_total: f64,
    pub val_kl: Option<f64>,
    pub val_total: Option<f64>,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
}

/// Everything needed to resume training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub opt_step: u64,
    pub scheduler: PlateauScheduler,
    pub epoch: u32,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(
        config: super::ArchitectureConfig,
        seed: u64,
        optimizer: &OptimizerConfig,
    ) -> Result<Self, NnError> {
        let model = Model::new(config, seed)?;
        Ok(Self {
            model,
            opt_step: 0,
            scheduler: PlateauScheduler::new(
                optimizer.learning_rate,
                optimizer.plateau_patience,
                optimizer.decay_factor,
            ),
            epoch: 0,
            seed,
            history: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TrainEvent {
    EpochEnd(EpochRecord),
    /// The epoch achieved a new best validation loss.
    NewBest(EpochRecord),
}

/// Runs epochs `state.epoch .. config.epochs`, mutating the state in place.
/// Mini-batches shuffle per epoch from the `shuffle` seed stream; a leftover
/// batch of a single sample is dropped (batch norm needs two). The
/// validation split never contributes gradient updates.
pub fn train_epochs(
    state: &mut TrainState<f32>,
    data: &Dataset,
    split: &DatasetSplit,
    config: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent, &TrainState<f32>),
) -> Result<(), TrainError> {
    let channels = state.model.config.input_channels;
    let opt = config.optimizer;
    if state.model.config.standardize && state.model.input_norm.is_none() {
        state.model.input_norm = Some(channel_statistics(data, &split.train, channels)?);
    }

    for epoch in state.epoch..config.epochs {
        let mut order = split.train.clone();
        let mut rng = stream_rng(state.seed, "shuffle", u64::from(epoch));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let lr = state.scheduler.learning_rate;
        let mut kl_sum = 0.0;
        let mut total_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let (x, target) = data.batch(batch, channels).map_err(|e| TrainError::Data(e.to_string()))?;
            state.model.zero_grad();
            let q = state.model.forward(&x, true)?;
            let (kl, dq) = match kl_loss(&target, &q) {
                Ok(v) => v,
                Err(NnError::NonFinite(_)) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        max_abs_grad: max_abs_grad(&mut state.model),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let penalty = state.model.l2_value(opt.l2_weight);
            let total = kl + penalty;
            state.model.backward(&dq)?;
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    max_abs_grad: max_abs_grad(&mut state.model),
                });
            }
            state.model.for_each_param(|p| add_l2_gradient(p, opt.l2_weight));
            state.opt_step += 1;
            let t = state.opt_step;
            match opt.algorithm {
                Algorithm::Adam => state.model.for_each_param(|p| adam_step(p, &opt, lr, t)),
                Algorithm::Sgd => state.model.for_each_param(|p| sgd_step(p, lr)),
            }
            kl_sum += kl * batch.len() as f64;
            total_sum += total * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(TrainError::Data("training split produced no usable batches".into()));
        }

        let (val_kl, val_total) = if split.validation.is_empty() {
            (None, None)
        } else {
            let kl = validation_kl(&mut state.model, data, &split.validation, config.batch_size)?;
            let total = kl + state.model.l2_value(opt.l2_weight);
            (Some(kl), Some(total))
        };

        let record = EpochRecord {
            epoch,
            train_kl: kl_sum / seen as f64,
            train_total: total_sum / seen as f64,
            val_kl,
            val_total,
            learning_rate: lr,
        };
        state.history.push(record);
        state.epoch = epoch + 1;

        let mut is_best = false;
        if let Some(vt) = val_total {
            is_best = state.scheduler.best.map_or(true, |b| vt < b);
            state.scheduler.observe(vt);
        }
        on_event(TrainEvent::EpochEnd(record), state);
        if is_best {
            on_event(TrainEvent::NewBest(record), state);
        }
    }
    Ok(())
}

/// Mean validation KL in inference mode (frozen batch-norm statistics).
pub fn validation_kl(
    model: &mut Model<f32>,
    data: &Dataset,
    indices: &[u32],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let channels = model.config.input_channels;
    let mut sum = 0.0;
    let mut seen = 0usize;
    for batch in indices.chunks(batch_size.max(1)) {
        let (x, target) = data.batch(batch, channels).map_err(|e| TrainError::Data(e.to_string()))?;
        let q = model.forward(&x, false)?;
        let (kl, _) = kl_loss(&target, &q)?;
        sum += kl * batch.len() as f64;
        seen += batch.len();
    }
    Ok(sum / seen.max(1) as f64)
}

/// Per-channel mean and standard deviation over a set of samples.
fn channel_statistics(
    data: &Dataset,
    indices: &[u32],
    channels: usize,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut mean = vec![0.0_f64; channels];
    let mut m2 = vec![0.0_f64; channels];
    let mut n = 0.0_f64;
    for &i in indices {
        let sample = data
            .samples
            .get(i as usize)
            .ok_or_else(|| TrainError::Data(format!("sample {i} out of range")))?;
        let stored = data.channels as usize;
        for px in sample.input.data().chunks_exact(stored) {
            n += 1.0;
            for c in 0..channels {
                let v = if channels == stored {
                    f64::from(px[c])
                } else {
                    // 3-channel view of 6-channel storage.
                    f64::from(match c {
                        0 | 1 => px[c],
                        _ => px[stored - 1],
                    })
                };
                let delta = v - mean[c];
                mean[c] += delta / n;
                m2[c] += delta * (v - mean[c]);
            }
        }
    }
    let std: Vec<f64> = m2.iter().map(|&s| (s / n.max(1.0)).sqrt().max(1e-8)).collect();
    Ok((mean, std))
}

fn max_abs_grad(model: &mut Model<f32>) -> f64 {
    let mut worst = 0.0_f64;
    model.for_each_param(|p| {
        for &g in p.grad.data() {
            let a = f64::from(g).abs();
            if a > worst || a.is_nan() {
                worst = a;
            }
        }
    });
    worst
}
