//! Checkpoint file (`TOPC` v1, little-endian): architecture config block,
//! per-layer parameter tensors with shape headers, optimizer state (Adam m,
//! v, step), scheduler state (best loss, epochs since best, learning rate),
//! then the resumable trainer extras (epoch counter, seed, loss history).
//! The parser validates dimensions against caps before allocating.

use super::train::{EpochRecord, TrainState};
use super::{ArchitectureConfig, Model};
use crate::nn::{NnError, PlateauScheduler, Tensor};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TOPC";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_DIM: u32 = 1 << 16;
const MAX_ELEMENTS: usize = 1 << 26;
const MAX_HISTORY: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn bad(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

fn rd<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    Ok(rd::<1>(r)?[0])
}
fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(rd(r)?))
}
fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(rd(r)?))
}
fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_le_bytes(rd(r)?))
}
fn read_f32_vec(r: &mut impl Read, len: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}
fn write_f32s(w: &mut impl Write, data: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn write_tensor(w: &mut impl Write, t: &Tensor<f32>) -> io::Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    write_f32s(w, t.data())
}

fn read_dim(r: &mut impl Read, what: &str) -> Result<usize, CheckpointError> {
    let v = read_u32(r).map_err(|_| bad(format!("truncated {what}")))?;
    if v == 0 || v > MAX_DIM {
        return Err(bad(format!("{what} {v} out of range")));
    }
    Ok(v as usize)
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor<f32>, CheckpointError> {
    let ndim = read_u32(r).map_err(|_| bad("truncated tensor header"))?;
    if ndim == 0 || ndim > 8 {
        return Err(bad(format!("tensor rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    let mut len = 1usize;
    for _ in 0..ndim {
        let d = read_u32(r).map_err(|_| bad("truncated tensor shape"))?;
        if d == 0 || d > MAX_DIM {
            return Err(bad(format!("tensor dimension {d}")));
        }
        len = len
            .checked_mul(d as usize)
            .filter(|&l| l <= MAX_ELEMENTS)
            .ok_or_else(|| bad("tensor too large"))?;
        shape.push(d as usize);
    }
    let data = read_f32_vec(r, len).map_err(|_| bad("truncated tensor data"))?;
    Ok(Tensor::from_vec(&shape, data))
}

/// Saves the complete training state (model, optimizer, scheduler, history).
pub fn save_checkpoint(state: &TrainState<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;

    let cfg = &state.model.config;
    w.write_all(&(cfg.input_channels as u32).to_le_bytes())?;
    w.write_all(&(cfg.stem_width as u32).to_le_bytes())?;
    for &e in &cfg.encoder_widths {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    w.write_all(&(cfg.bridge_width as u32).to_le_bytes())?;
    for &d in &cfg.decoder_widths {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(cfg.head_widths.len() as u32).to_le_bytes())?;
    for &h in &cfg.head_widths {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&[u8::from(cfg.standardize)])?;
    match &state.model.input_norm {
        Some((mean, std)) => {
            w.write_all(&[1])?;
            for &m in mean {
                w.write_all(&m.to_le_bytes())?;
            }
            for &s in std {
                w.write_all(&s.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0])?,
    }

    let mut io_err: Option<io::Error> = None;
    state.model.for_each_param_ref(|p| {
        if io_err.is_none() {
            if let Err(e) = write_tensor(&mut w, &p.value) {
                io_err = Some(e);
            }
        }
    });
    state.model.for_each_batchnorm_ref(|bn| {
        if io_err.is_none() {
            let res = (|| {
                w.write_all(&(bn.running_mean.len() as u32).to_le_bytes())?;
                write_f32s(&mut w, &bn.running_mean)?;
                write_f32s(&mut w, &bn.running_var)
            })();
            if let Err(e) = res {
                io_err = Some(e);
            }
        }
    });

    w.write_all(&state.opt_step.to_le_bytes())?;
    state.model.for_each_param_ref(|p| {
        if io_err.is_none() {
            if let Err(e) = write_f32s(&mut w, p.m.data()).and_then(|_| write_f32s(&mut w, p.v.data())) {
                io_err = Some(e);
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }

    let sched = &state.scheduler;
    w.write_all(&[u8::from(sched.best.is_some())])?;
    w.write_all(&sched.best.unwrap_or(0.0).to_le_bytes())?;
    w.write_all(&sched.epochs_since_best.to_le_bytes())?;
    w.write_all(&sched.learning_rate.to_le_bytes())?;
    w.write_all(&sched.patience.to_le_bytes())?;
    w.write_all(&sched.factor.to_le_bytes())?;

    w.write_all(&state.epoch.to_le_bytes())?;
    w.write_all(&state.seed.to_le_bytes())?;
    w.write_all(&(state.history.len() as u32).to_le_bytes())?;
    for rec in &state.history {
        w.write_all(&rec.epoch.to_le_bytes())?;
        w.write_all(&rec.train_kl.to_le_bytes())?;
        w.write_all(&rec.train_total.to_le_bytes())?;
        w.write_all(&[u8::from(rec.val_kl.is_some())])?;
        w.write_all(&rec.val_kl.unwrap_or(0.0).to_le_bytes())?;
        w.write_all(&rec.val_total.unwrap_or(0.0).to_le_bytes())?;
        w.write_all(&rec.learning_rate.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a checkpoint from any reader. Fuzzed entry point.
pub fn parse_checkpoint(r: &mut impl Read) -> Result<TrainState<f32>, CheckpointError> {
    let magic = rd::<4>(r).map_err(|_| bad("truncated magic"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = read_u32(r).map_err(|_| bad("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }

    let input_channels = read_dim(r, "input channels")?;
    let stem_width = read_dim(r, "stem width")?;
    let encoder_widths = [
        read_dim(r, "encoder width")?,
        read_dim(r, "encoder width")?,
        read_dim(r, "encoder width")?,
    ];
    let bridge_width = read_dim(r, "bridge width")?;
    let decoder_widths = [
        read_dim(r, "decoder width")?,
        read_dim(r, "decoder width")?,
        read_dim(r, "decoder width")?,
    ];
    let head_len = read_u32(r).map_err(|_| bad("truncated head length"))?;
    if head_len > 16 {
        return Err(bad(format!("head stack of {head_len} layers")));
    }
    let mut head_widths = Vec::with_capacity(head_len as usize);
    for _ in 0..head_len {
        head_widths.push(read_dim(r, "head width")?);
    }
    let standardize = read_u8(r).map_err(|_| bad("truncated flags"))? != 0;
    let config = ArchitectureConfig {
        input_channels,
        stem_width,
        encoder_widths,
        bridge_width,
        decoder_widths,
        head_widths,
        standardize,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;

    let has_norm = read_u8(r).map_err(|_| bad("truncated flags"))? != 0;
    let input_norm = if has_norm {
        let mut mean = Vec::with_capacity(input_channels);
        for _ in 0..input_channels {
            mean.push(read_f64(r).map_err(|_| bad("truncated norm"))?);
        }
        let mut std = Vec::with_capacity(input_channels);
        for _ in 0..input_channels {
            let s = read_f64(r).map_err(|_| bad("truncated norm"))?;
            if !(s.is_finite() && s > 0.0) {
                return Err(bad(format!("channel std {s}")));
            }
            std.push(s);
        }
        Some((mean, std))
    } else {
        None
    };

    // Seed is irrelevant here: every parameter gets overwritten.
    let mut model = Model::<f32>::new(config, 0)?;
    model.input_norm = input_norm;

    let mut err: Option<CheckpointError> = None;
    model.for_each_param(|p| {
        if err.is_some() {
            return;
        }
        match read_tensor(r) {
            Ok(t) if t.shape() == p.value.shape() => p.value = t,
            Ok(t) => {
                err = Some(bad(format!(
                    "parameter shape {:?} does not match architecture {:?}",
                    t.shape(),
                    p.value.shape()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    model.for_each_batchnorm(|bn| {
        if err.is_some() {
            return;
        }
        let res = (|| -> Result<(), CheckpointError> {
            let c = read_u32(r).map_err(|_| bad("truncated running stats"))? as usize;
            if c != bn.channels() {
                return Err(bad(format!("running stats for {c} channels")));
            }
            bn.running_mean = read_f32_vec(r, c).map_err(|_| bad("truncated running mean"))?;
            bn.running_var = read_f32_vec(r, c).map_err(|_| bad("truncated running var"))?;
            Ok(())
        })();
        if let Err(e) = res {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }

    let opt_step = read_u64(r).map_err(|_| bad("truncated optimizer step"))?;
    let mut err: Option<CheckpointError> = None;
    model.for_each_param(|p| {
        if err.is_some() {
            return;
        }
        let res = (|| -> Result<(), CheckpointError> {
            let len = p.value.len();
            let m = read_f32_vec(r, len).map_err(|_| bad("truncated adam m"))?;
            let v = read_f32_vec(r, len).map_err(|_| bad("truncated adam v"))?;
            p.m = Tensor::from_vec(p.value.shape(), m);
            p.v = Tensor::from_vec(p.value.shape(), v);
            Ok(())
        })();
        if let Err(e) = res {
            err = Some(e);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }

    let has_best = read_u8(r).map_err(|_| bad("truncated scheduler"))? != 0;
    let best = read_f64(r).map_err(|_| bad("truncated scheduler"))?;
    let epochs_since_best = read_u32(r).map_err(|_| bad("truncated scheduler"))?;
    let learning_rate = read_f64(r).map_err(|_| bad("truncated scheduler"))?;
    let patience = read_u32(r).map_err(|_| bad("truncated scheduler"))?;
    let factor = read_f64(r).map_err(|_| bad("truncated scheduler"))?;
    if !learning_rate.is_finite() || !factor.is_finite() {
        return Err(bad("non-finite scheduler state"));
    }
    let scheduler = PlateauScheduler {
        learning_rate,
        best: has_best.then_some(best),
        epochs_since_best,
        patience,
        factor,
    };

    let epoch = read_u32(r).map_err(|_| bad("truncated epoch"))?;
    let seed = read_u64(r).map_err(|_| bad("truncated seed"))?;
    let hist_len = read_u32(r).map_err(|_| bad("truncated history length"))?;
    if hist_len > MAX_HISTORY {
        return Err(bad(format!("history of {hist_len} epochs")));
    }
    let mut history = Vec::with_capacity(hist_len as usize);
    for _ in 0..hist_len {
        let epoch = read_u32(r).map_err(|_| bad("truncated history"))?;
        let train_kl = read_f64(r).map_err(|_| bad("truncated history"))?;
        let train_total = read_f64(r).map_err(|_| bad("truncated history"))?;
        let has_val = read_u8(r).map_err(|_| bad("truncated history"))? != 0;
        let val_kl = read_f64(r).map_err(|_| bad("truncated history"))?;
        let val_total = read_f64(r).map_err(|_| bad("truncated history"))?;
        let learning_rate = read_f64(r).map_err(|_| bad("truncated history"))?;
        history.push(EpochRecord {
            epoch,
            train_kl,
            train_total,
            val_kl: has_val.then_some(val_kl),
            val_total: has_val.then_some(val_total),
            learning_rate,
        });
    }

    Ok(TrainState { model, opt_step, scheduler, epoch, seed, history })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState<f32>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    parse_checkpoint(&mut r)
}
