//! Binary dataset and split files (little-endian).
//!
//! Dataset (`TOPD` v1): magic, version u32, header {nelx u32, nely u32,
//! channels u32, count u32, master_seed u64, bc_kind u8}, then per sample a
//! metadata block {f f64, load_count u8, loads (node u32, dir u8, mag f64)…,
//! simp_iters u32, simp_compliance f64}, the input tensor as f32 row-major
//! (y, x, channel) and the target as f32 row-major (y, x).
//!
//! Split (`TOPS` v1): magic, version u32, then three u32 arrays
//! (len-prefixed) for train/validation/test.
//!
//! Readers validate all counts against hard caps before allocating, so they
//! are safe on untrusted input (see the fuzz targets).

use super::{BcKind, Dataset, DatasetError, DatasetSplit, InputTensor, Sample, SampleMeta};
use crate::fem::{Direction, Load, LoadCase, MeshSpec};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

pub const DATASET_MAGIC: [u8; 4] = *b"TOPD";
pub const SPLIT_MAGIC: [u8; 4] = *b"TOPS";
pub const FORMAT_VERSION: u32 = 1;

const MAX_SIDE: u32 = 4096;
const MAX_COUNT: u32 = 1 << 24;
const MAX_LOADS: u8 = 10;

// Byte offset of the sample-count field in the header.
const COUNT_OFFSET: u64 = 20;

fn bad(msg: impl Into<String>) -> DatasetError {
    DatasetError::Format(msg.into())
}

fn read_exact_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    Ok(read_exact_array::<1>(r)?[0])
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_le_bytes(read_exact_array(r)?))
}

pub(crate) fn read_f32_vec(r: &mut impl Read, len: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

pub(crate) fn write_f32_slice(w: &mut impl Write, data: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

/// Parses a dataset from any reader. This is the fuzzed entry point.
pub fn parse_dataset(r: &mut impl Read) -> Result<Dataset, DatasetError> {
    let magic = read_exact_array::<4>(r).map_err(|_| bad("truncated magic"))?;
    if magic != DATASET_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = read_u32(r).map_err(|_| bad("truncated version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let nelx = read_u32(r).map_err(|_| bad("truncated header"))?;
    let nely = read_u32(r).map_err(|_| bad("truncated header"))?;
    let channels = read_u32(r).map_err(|_| bad("truncated header"))?;
    let count = read_u32(r).map_err(|_| bad("truncated header"))?;
    let master_seed = read_u64(r).map_err(|_| bad("truncated header"))?;
    let bc_code = read_u8(r).map_err(|_| bad("truncated header"))?;

    if nelx == 0 || nely == 0 || nelx > MAX_SIDE || nely > MAX_SIDE {
        return Err(bad(format!("mesh {nelx}x{nely} out of range")));
    }
    if channels != 3 && channels != 6 {
        return Err(bad(format!("channels {channels} not in {{3, 6}}")));
    }
    if count > MAX_COUNT {
        return Err(bad(format!("count {count} too large")));
    }
    let bc = BcKind::from_code(bc_code).ok_or_else(|| bad("unknown boundary condition"))?;
    let mesh =
        MeshSpec::new(nelx as usize, nely as usize).map_err(|e| bad(e.to_string()))?;

    let mut samples = Vec::new();
    for i in 0..count {
        samples.push(parse_sample(r, &mesh, channels as usize, i)?);
    }
    Ok(Dataset { mesh, channels, master_seed, bc, samples })
}

fn parse_sample(
    r: &mut impl Read,
    mesh: &MeshSpec,
    channels: usize,
    index: u32,
) -> Result<Sample, DatasetError> {
    let input_len = (mesh.nely + 1) * (mesh.nelx + 1) * channels;
    let target_len = mesh.num_elements();
    let f = read_f64(r).map_err(|_| bad(format!("sample {index}: truncated metadata")))?;
    if !f.is_finite() || !(0.0..=1.0).contains(&f) {
        return Err(bad(format!("sample {index}: volume fraction {f}")));
    }
    let load_count = read_u8(r).map_err(|_| bad("truncated load count"))?;
    if load_count == 0 || load_count > MAX_LOADS {
        return Err(bad(format!("sample {index}: load count {load_count}")));
    }
    let mut loads = Vec::with_capacity(load_count as usize);
    for _ in 0..load_count {
        let node = read_u32(r).map_err(|_| bad("truncated load"))? as usize;
        let dir = read_u8(r).map_err(|_| bad("truncated load"))?;
        let magnitude = read_f64(r).map_err(|_| bad("truncated load"))?;
        if node >= mesh.num_nodes() {
            return Err(bad(format!("sample {index}: load node {node} outside grid")));
        }
        let direction =
            Direction::from_code(dir).ok_or_else(|| bad("unknown load direction"))?;
        if !magnitude.is_finite() || magnitude <= 0.0 {
            return Err(bad(format!("sample {index}: load magnitude {magnitude}")));
        }
        loads.push(Load { node, direction, magnitude });
    }
    let simp_iterations = read_u32(r).map_err(|_| bad("truncated metadata"))?;
    let simp_compliance = read_f64(r).map_err(|_| bad("truncated metadata"))?;
    if !simp_compliance.is_finite() {
        return Err(bad(format!("sample {index}: compliance {simp_compliance}")));
    }
    let input_data =
        read_f32_vec(r, input_len).map_err(|_| bad(format!("sample {index}: truncated input")))?;
    let target = read_f32_vec(r, target_len)
        .map_err(|_| bad(format!("sample {index}: truncated target")))?;
    if input_data.iter().chain(target.iter()).any(|v| !v.is_finite()) {
        return Err(bad(format!("sample {index}: non-finite payload")));
    }
    Ok(Sample {
        input: InputTensor::new(mesh.nely + 1, mesh.nelx + 1, channels, input_data),
        target,
        meta: SampleMeta {
            seed: 0,
            volume_fraction: f,
            loads: LoadCase { loads },
            simp_iterations,
            simp_compliance,
        },
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    parse_dataset(&mut r)
}

pub(crate) fn write_header(
    w: &mut impl Write,
    ds: &Dataset,
    count: u32,
) -> Result<(), DatasetError> {
    w.write_all(&DATASET_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(ds.mesh.nelx as u32).to_le_bytes())?;
    w.write_all(&(ds.mesh.nely as u32).to_le_bytes())?;
    w.write_all(&ds.channels.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&ds.master_seed.to_le_bytes())?;
    w.write_all(&[ds.bc.code()])?;
    Ok(())
}

pub(crate) fn append_sample(w: &mut (impl Write + Seek), sample: &Sample) -> io::Result<()> {
    w.seek(SeekFrom::End(0))?;
    let mut buf = BufWriter::new(w);
    buf.write_all(&sample.meta.volume_fraction.to_le_bytes())?;
    buf.write_all(&[sample.meta.loads.loads.len() as u8])?;
    for load in &sample.meta.loads.loads {
        buf.write_all(&(load.node as u32).to_le_bytes())?;
        buf.write_all(&[load.direction.code()])?;
        buf.write_all(&load.magnitude.to_le_bytes())?;
    }
    buf.write_all(&sample.meta.simp_iterations.to_le_bytes())?;
    buf.write_all(&sample.meta.simp_compliance.to_le_bytes())?;
    write_f32_slice(&mut buf, sample.input.data())?;
    write_f32_slice(&mut buf, &sample.target)?;
    buf.flush()
}

/// Rewrites the count field in the header; appended samples become visible to
/// readers only after this, so partially written files stay valid.
pub(crate) fn patch_count(w: &mut (impl Write + Seek), count: u32) -> io::Result<()> {
    w.seek(SeekFrom::Start(COUNT_OFFSET))?;
    w.write_all(&count.to_le_bytes())?;
    w.seek(SeekFrom::End(0))?;
    Ok(())
}

/// Writes a complete dataset file.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut file = BufWriter::new(File::create(path)?);
    write_header(&mut file, ds, ds.samples.len() as u32)?;
    file.flush()?;
    let mut inner = file.into_inner().map_err(|e| DatasetError::Io(e.into_error()))?;
    for sample in &ds.samples {
        append_sample(&mut inner, sample)?;
    }
    inner.flush()?;
    Ok(())
}

/// Parses a split file from any reader. Fuzzed entry point.
pub fn parse_split(r: &mut impl Read) -> Result<DatasetSplit, DatasetError> {
    let magic = read_exact_array::<4>(r).map_err(|_| bad("truncated magic"))?;
    if magic != SPLIT_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = read_u32(r).map_err(|_| bad("truncated version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut sets = Vec::with_capacity(3);
    for _ in 0..3 {
        let len = read_u32(r).map_err(|_| bad("truncated set length"))?;
        if len > MAX_COUNT {
            return Err(bad(format!("split set length {len} too large")));
        }
        let mut set = Vec::with_capacity(len as usize);
        for _ in 0..len {
            set.push(read_u32(r).map_err(|_| bad("truncated split set"))?);
        }
        sets.push(set);
    }
    let test = sets.pop().unwrap();
    let validation = sets.pop().unwrap();
    let train = sets.pop().unwrap();
    Ok(DatasetSplit { train, validation, test })
}

pub fn read_split(path: &Path) -> Result<DatasetSplit, DatasetError> {
    let mut r = BufReader::new(File::open(path)?);
    parse_split(&mut r)
}

pub fn write_split(split: &DatasetSplit, path: &Path) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SPLIT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for set in [&split.train, &split.validation, &split.test] {
        w.write_all(&(set.len() as u32).to_le_bytes())?;
        for &i in set.iter() {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
