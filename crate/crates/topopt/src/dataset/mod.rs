//! Dataset generation: sample problem conditions from the training
//! distributions, build multi-channel input tensors from an initial
//! uniform-density solve, pair them with optimizer targets, split 8:1:1, and
//! persist everything in the binary formats described in [`format`].

mod format;

pub use format::{parse_dataset, parse_split, read_dataset, read_split, write_dataset, write_split};

use crate::fem::{
    assemble_and_solve, nodal_fields, BoundaryCondition, Direction, FemError, Load, LoadCase,
    Material, MeshSpec,
};
use crate::simp::{self, SimpConfig, SimpError};
use crate::util::stream_rng;
use rand::Rng;
use rayon::prelude::*;
use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Simp(#[from] SimpError),
}

/// Serializable boundary-condition kind (the dataset header stores one byte).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Cantilever,
    SimplySupported,
    ContinuousBeam,
}

impl BcKind {
    pub fn code(self) -> u8 {
        match self {
            BcKind::Cantilever => 0,
            BcKind::SimplySupported => 1,
            BcKind::ContinuousBeam => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => BcKind::Cantilever,
            1 => BcKind::SimplySupported,
            2 => BcKind::ContinuousBeam,
            _ => return None,
        })
    }

    pub fn boundary_condition(self) -> BoundaryCondition {
        match self {
            BcKind::Cantilever => BoundaryCondition::Cantilever,
            BcKind::SimplySupported => BoundaryCondition::SimplySupported,
            BcKind::ContinuousBeam => BoundaryCondition::ContinuousBeam,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BcKind::Cantilever => "cantilever",
            BcKind::SimplySupported => "simply-supported",
            BcKind::ContinuousBeam => "continuous",
        }
    }
}

/// `(H+1) x (W+1) x C` network input, row-major (y, x, channel). Channel
/// order: ux, uy, [eps_x, eps_y, gamma_xy,] volume fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

impl InputTensor {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols * channels, data.len());
        Self { rows, cols, channels, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.cols + x) * self.channels + c]
    }

    /// The 3-channel view (ux, uy, vf) of a 6-channel tensor.
    pub fn three_channel_view(&self) -> InputTensor {
        assert_eq!(self.channels, 6, "view requires a 6-channel tensor");
        let mut data = Vec::with_capacity(self.rows * self.cols * 3);
        for px in self.data.chunks_exact(6) {
            data.extend_from_slice(&[px[0], px[1], px[5]]);
        }
        InputTensor::new(self.rows, self.cols, 3, data)
    }
}

/// Per-sample metadata. The seed is the in-memory provenance of the draw and
/// is not persisted; the file format derives everything from the header's
/// master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub seed: u64,
    pub volume_fraction: f64,
    pub loads: LoadCase,
    pub simp_iterations: u32,
    pub simp_compliance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: InputTensor,
    /// Optimized density layout, row-major (ey, ex), f32 storage.
    pub target: Vec<f32>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mesh: MeshSpec,
    pub channels: u32,
    pub master_seed: u64,
    pub bc: BcKind,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Assembles an input/target batch as `[b, H+1, W+1, C]` and
    /// `[b, H, W, 1]` tensors. `channels` may be 3 to view a 6-channel
    /// dataset through the (ux, uy, vf) ablation.
    pub fn batch(
        &self,
        indices: &[u32],
        channels: usize,
    ) -> Result<(crate::nn::Tensor<f32>, crate::nn::Tensor<f32>), DatasetError> {
        let stored = self.channels as usize;
        if channels != stored && !(channels == 3 && stored == 6) {
            return Err(DatasetError::Config(format!(
                "cannot view {stored}-channel data as {channels} channels"
            )));
        }
        let rows = self.mesh.nely + 1;
        let cols = self.mesh.nelx + 1;
        let b = indices.len();
        let mut xs = Vec::with_capacity(b * rows * cols * channels);
        let mut ts = Vec::with_capacity(b * self.mesh.num_elements());
        for &i in indices {
            let sample = self
                .samples
                .get(i as usize)
                .ok_or_else(|| DatasetError::Config(format!("sample index {i} out of range")))?;
            if channels == stored {
                xs.extend_from_slice(sample.input.data());
            } else {
                for px in sample.input.data().chunks_exact(stored) {
                    xs.extend_from_slice(&[px[0], px[1], px[stored - 1]]);
                }
            }
            ts.extend_from_slice(&sample.target);
        }
        Ok((
            crate::nn::Tensor::from_vec(&[b, rows, cols, channels], xs),
            crate::nn::Tensor::from_vec(&[b, self.mesh.nely, self.mesh.nelx, 1], ts),
        ))
    }
}

/// Train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

/// Deterministic shuffled 8:1:1 split.
pub fn make_split(count: u32, master_seed: u64) -> DatasetSplit {
    let mut order: Vec<u32> = (0..count).collect();
    let mut rng = stream_rng(master_seed, "split", 0);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = (count / 10) as usize;
    let n_test = (count / 10) as usize;
    let n_train = count as usize - n_val - n_test;
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    DatasetSplit { train, validation, test }
}

/// Draws the per-sample conditions: volume fraction uniform in [0.2, 0.8],
/// 1..=10 loads with uniform directions, unit magnitudes, and node positions
/// uniform over the unconstrained perimeter nodes. Duplicate (node,
/// direction) pairs are redrawn.
pub fn sample_conditions(
    mesh: &MeshSpec,
    bc: &BoundaryCondition,
    rng: &mut impl Rng,
) -> (f64, LoadCase) {
    let f = 0.2 + 0.6 * rng.random::<f64>();
    let fixed = bc.fixed_nodes(mesh);
    let eligible: Vec<usize> = mesh
        .perimeter_nodes()
        .into_iter()
        .filter(|n| fixed.binary_search(n).is_err())
        .collect();
    let count = rng.random_range(1..=10usize);
    let mut loads: Vec<Load> = Vec::with_capacity(count);
    while loads.len() < count {
        let node = eligible[rng.random_range(0..eligible.len())];
        let direction = Direction::ALL[rng.random_range(0..4)];
        if loads.iter().any(|l| l.node == node && l.direction == direction) {
            continue;
        }
        loads.push(Load { node, direction, magnitude: 1.0 });
    }
    (f, LoadCase { loads })
}

/// Builds the network input: solves the problem with every element density
/// equal to the volume fraction and stacks the nodal fields plus the
/// constant volume-fraction channel. Generation runs in f64 and stores f32.
pub fn build_input(
    mesh: &MeshSpec,
    bc: &BoundaryCondition,
    material: &Material,
    volume_fraction: f64,
    loads: &LoadCase,
    channels: u32,
    penalty: f64,
) -> Result<InputTensor, FemError> {
    let densities = crate::fem::DensityMap::uniform(mesh, volume_fraction);
    let u = assemble_and_solve(mesh, bc, loads, &densities, material, penalty)?;
    let fields = nodal_fields(mesh, &u);
    let rows = mesh.nely + 1;
    let cols = mesh.nelx + 1;
    let c = channels as usize;
    let mut data = Vec::with_capacity(rows * cols * c);
    for i in 0..rows * cols {
        data.push(fields.ux[i] as f32);
        data.push(fields.uy[i] as f32);
        if c == 6 {
            data.push(fields.eps_x[i] as f32);
            data.push(fields.eps_y[i] as f32);
            data.push(fields.gamma_xy[i] as f32);
        }
        data.push(volume_fraction as f32);
    }
    Ok(InputTensor::new(rows, cols, c, data))
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub mesh: MeshSpec,
    pub bc: BcKind,
    pub count: u32,
    pub master_seed: u64,
    pub channels: u32,
    pub material: Material,
    pub simp: SimpConfig,
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.count < 10 {
            return Err(DatasetError::Config("count must be at least 10".into()));
        }
        if self.channels != 3 && self.channels != 6 {
            return Err(DatasetError::Config("channels must be 3 or 6".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GenProgress {
    pub completed: u32,
    pub total: u32,
    pub last_iterations: u32,
    pub last_compliance: f64,
    pub redraws: u32,
}

/// Generates one sample; SIMP failures are logged and the conditions redrawn
/// with a fresh attempt seed.
pub fn generate_sample(config: &GenConfig, index: u32) -> Result<(Sample, u32), DatasetError> {
    let bc = config.bc.boundary_condition();
    for attempt in 0..16u64 {
        let seed_index = (attempt << 32) | u64::from(index);
        let mut rng = stream_rng(config.master_seed, "sample", seed_index);
        let (f, loads) = sample_conditions(&config.mesh, &bc, &mut rng);
        let simp_config = SimpConfig { volume_fraction: f, ..config.simp };
        let input = build_input(
            &config.mesh,
            &bc,
            &config.material,
            f,
            &loads,
            config.channels,
            config.simp.penalty,
        );
        let result = input.map_err(SimpError::Fem).and_then(|input| {
            simp::optimize(&config.mesh, &bc, &loads, &config.material, &simp_config)
                .map(|r| (input, r))
        });
        match result {
            Ok((input, r)) => {
                let target: Vec<f32> = r.densities.values().iter().map(|&v| v as f32).collect();
                let meta = SampleMeta {
                    seed: seed_index,
                    volume_fraction: f,
                    loads,
                    simp_iterations: r.iterations,
                    simp_compliance: r.compliance,
                };
                return Ok((Sample { input, target, meta }, attempt as u32));
            }
            Err(err) => {
                log::warn!("sample {index} attempt {attempt} failed ({err}); redrawing");
            }
        }
    }
    Err(DatasetError::Config(format!("sample {index} failed after 16 attempts")))
}

/// Generates `count` samples into `path` (resuming a partial file when the
/// header matches) and writes the 8:1:1 split next to it as
/// `<path>.split`. Workers parallelize over sample indices; output is
/// order-deterministic regardless of scheduling.
pub fn generate(
    config: &GenConfig,
    path: &Path,
    mut progress: impl FnMut(&GenProgress),
) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let existing = if path.exists() {
        let ds = read_dataset(path)?;
        if ds.mesh != config.mesh
            || ds.channels != config.channels
            || ds.master_seed != config.master_seed
            || ds.bc != config.bc
        {
            return Err(DatasetError::Config(
                "existing dataset file does not match the generation config".into(),
            ));
        }
        if ds.samples.len() as u32 > config.count {
            return Err(DatasetError::Config(format!(
                "existing dataset already has {} samples",
                ds.samples.len()
            )));
        }
        Some(ds)
    } else {
        None
    };

    let mut dataset = existing.unwrap_or_else(|| Dataset {
        mesh: config.mesh,
        channels: config.channels,
        master_seed: config.master_seed,
        bc: config.bc,
        samples: Vec::new(),
    });

    // Rewrite what we have (also truncates torn trailing writes), then append.
    write_dataset(&dataset, path)?;
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    file.seek(SeekFrom::End(0))?;

    let mut done = dataset.samples.len() as u32;
    let mut redraws = 0u32;
    while done < config.count {
        let chunk_end = (done + 16).min(config.count);
        let produced: Vec<Result<(Sample, u32), DatasetError>> =
            (done..chunk_end).into_par_iter().map(|i| generate_sample(config, i)).collect();
        for item in produced {
            let (sample, attempts) = item?;
            redraws += attempts;
            format::append_sample(&mut file, &sample)?;
            format::patch_count(&mut file, done + 1)?;
            progress(&GenProgress {
                completed: done + 1,
                total: config.count,
                last_iterations: sample.meta.simp_iterations,
                last_compliance: sample.meta.simp_compliance,
                redraws,
            });
            dataset.samples.push(sample);
            done += 1;
        }
        file.flush()?;
    }

    let split = make_split(config.count, config.master_seed);
    write_split(&split, &split_path(path))?;
    Ok(dataset)
}

/// Conventional location of the split file for a dataset path.
pub fn split_path(dataset_path: &Path) -> std::path::PathBuf {
    let mut os = dataset_path.as_os_str().to_owned();
    os.push(".split");
    std::path::PathBuf::from(os)
}
