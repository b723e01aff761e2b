//! Evaluation protocol: per-sample compliance / pixel / volume-fraction
//! errors, structural-disconnection detection, aggregate summaries, and
//! grayscale map export.

use crate::dataset::{BcKind, Dataset, InputTensor};
use crate::fem::{
    assemble_and_solve, compliance, BoundaryCondition, DensityMap, FemError, LoadCase, Material,
    MeshSpec, DENSITY_MIN,
};
use crate::nn::NnError;
use crate::simp::{self, SimpConfig, SimpError};
use crate::unet::Model;
use crate::util::stream_rng;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Simp(#[from] SimpError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Binary element grid, row-major (ey, ex).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub nelx: usize,
    pub nely: usize,
    pub solid: Vec<bool>,
}

impl BinaryGrid {
    #[inline]
    pub fn get(&self, ex: usize, ey: usize) -> bool {
        self.solid[ey * self.nelx + ex]
    }
}

/// Thresholds a density map; entries >= `threshold` count as solid.
pub fn binarize(map: &DensityMap, threshold: f64) -> BinaryGrid {
    BinaryGrid {
        nelx: map.nelx(),
        nely: map.nely(),
        solid: map.values().iter().map(|&v| v >= threshold).collect(),
    }
}

/// Mean absolute density difference and binarized pixel accuracy.
pub fn pixel_metrics(pred: &DensityMap, target: &DensityMap) -> Result<(f64, f64), EvalError> {
    if pred.nelx() != target.nelx() || pred.nely() != target.nely() {
        return Err(EvalError::Shape(format!(
            "{}x{} vs {}x{}",
            pred.nely(),
            pred.nelx(),
            target.nely(),
            target.nelx()
        )));
    }
    let n = pred.values().len() as f64;
    let error: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let pb = binarize(pred, 0.5);
    let tb = binarize(target, 0.5);
    let agree = pb.solid.iter().zip(tb.solid.iter()).filter(|(a, b)| a == b).count();
    Ok((error, agree as f64 / n))
}

/// `|mean(pred) - mean(target)| / mean(target)` on continuous values.
pub fn volume_fraction_error(pred: &DensityMap, target: &DensityMap) -> f64 {
    (pred.mean() - target.mean()).abs() / target.mean()
}

/// 4-connected component labels over solid elements; 0 marks void.
fn label_components(grid: &BinaryGrid) -> (Vec<u32>, u32) {
    let (nelx, nely) = (grid.nelx, grid.nely);
    let mut labels = vec![0u32; nelx * nely];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..nelx * nely {
        if !grid.solid[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(e) = stack.pop() {
            let (ey, ex) = (e / nelx, e % nelx);
            let mut visit = |nx: usize, ny: usize| {
                let ne = ny * nelx + nx;
                if grid.solid[ne] && labels[ne] == 0 {
                    labels[ne] = next;
                    stack.push(ne);
                }
            };
            if ex > 0 {
                visit(ex - 1, ey);
            }
            if ex + 1 < nelx {
                visit(ex + 1, ey);
            }
            if ey > 0 {
                visit(ex, ey - 1);
            }
            if ey + 1 < nely {
                visit(ex, ey + 1);
            }
        }
    }
    (labels, next)
}

/// Elements whose corners include the given node.
fn elements_at_node(mesh: &MeshSpec, node: usize) -> Vec<usize> {
    let (ix, iy) = mesh.node_pos(node);
    let mut out = Vec::with_capacity(4);
    let ey_lo = iy.saturating_sub(1);
    let ex_lo = ix.saturating_sub(1);
    for ey in ey_lo..=iy {
        if ey >= mesh.nely || ey + 1 < iy {
            continue;
        }
        for ex in ex_lo..=ix {
            if ex >= mesh.nelx || ex + 1 < ix {
                continue;
            }
            out.push(ey * mesh.nelx + ex);
        }
    }
    out
}

/// True when no single solid component both touches a support node and
/// reaches every loaded node, i.e. the structure cannot carry the loads.
pub fn detect_disconnection(
    grid: &BinaryGrid,
    mesh: &MeshSpec,
    bc: &BoundaryCondition,
    loads: &LoadCase,
) -> bool {
    let (labels, count) = label_components(grid);
    if count == 0 {
        return true;
    }
    let mut touches_support = vec![false; count as usize + 1];
    for &node in &bc.fixed_nodes(mesh) {
        for e in elements_at_node(mesh, node) {
            touches_support[labels[e] as usize] = true;
        }
    }
    let mut reaches_all_loads = vec![true; count as usize + 1];
    for load in &loads.loads {
        let mut reached = vec![false; count as usize + 1];
        for e in elements_at_node(mesh, load.node) {
            reached[labels[e] as usize] = true;
        }
        for c in 1..=count as usize {
            reaches_all_loads[c] &= reached[c];
        }
    }
    !(1..=count as usize).any(|c| touches_support[c] && reaches_all_loads[c])
}

/// Marker for compliance evaluation of a disconnected prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComplianceOutcome {
    /// Signed relative error `(c_pred - c_target) / c_target`.
    Error(f64),
    Disconnected,
}

/// Binarizes both maps (solid -> 1, void -> the density lower bound),
/// re-solves each and returns the relative compliance error, or the
/// `Disconnected` marker when the prediction cannot carry its loads.
#[allow(clippy::too_many_arguments)]
pub fn compliance_error(
    pred: &DensityMap,
    target: &DensityMap,
    mesh: &MeshSpec,
    bc: &BoundaryCondition,
    loads: &LoadCase,
    material: &Material,
    penalty: f64,
    threshold: f64,
) -> Result<ComplianceOutcome, EvalError> {
    let pred_bin = binarize(pred, threshold);
    if detect_disconnection(&pred_bin, mesh, bc, loads) {
        return Ok(ComplianceOutcome::Disconnected);
    }
    let target_bin = binarize(target, threshold);
    let solve = |grid: &BinaryGrid| -> Result<f64, EvalError> {
        let dens = DensityMap::from_values(
            mesh,
            grid.solid.iter().map(|&s| if s { 1.0 } else { DENSITY_MIN }).collect(),
        )?;
        let u = assemble_and_solve(mesh, bc, loads, &dens, material, penalty)?;
        Ok(compliance(mesh, &dens, material, penalty, &u))
    };
    let c_pred = solve(&pred_bin)?;
    let c_target = solve(&target_bin)?;
    Ok(ComplianceOutcome::Error((c_pred - c_target) / c_target))
}

/// Per-sample evaluation record.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub index: usize,
    pub volume_fraction: f64,
    pub disconnected: bool,
    /// Absent for disconnected predictions.
    pub compliance_error: Option<f64>,
    pub pixel_values_error: f64,
    pub pixel_accuracy: f64,
    pub volume_fraction_error: f64,
    pub simp_seconds: Option<f64>,
    pub predict_seconds: f64,
}

/// Aggregates in the style of the comparison tables: disconnected samples are
/// excluded from the error averages and reported as a percentage.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub count: usize,
    pub disconnected: usize,
    pub disconnection_pct: f64,
    pub mean_abs_compliance_error: f64,
    pub mean_compliance_error: f64,
    pub mean_pixel_values_error: f64,
    pub mean_pixel_accuracy: f64,
    pub mean_volume_fraction_error: f64,
    pub mean_simp_seconds: Option<f64>,
    pub mean_predict_seconds: f64,
}

pub fn summarize(records: &[MetricsRecord]) -> Summary {
    let mut s = Summary { count: records.len(), ..Summary::default() };
    let mut kept = 0usize;
    let mut simp_times = 0.0;
    let mut simp_n = 0usize;
    for r in records {
        if r.disconnected {
            s.disconnected += 1;
        } else {
            kept += 1;
            let ce = r.compliance_error.unwrap_or(0.0);
            s.mean_abs_compliance_error += ce.abs();
            s.mean_compliance_error += ce;
            s.mean_pixel_values_error += r.pixel_values_error;
            s.mean_pixel_accuracy += r.pixel_accuracy;
            s.mean_volume_fraction_error += r.volume_fraction_error;
        }
        if let Some(t) = r.simp_seconds {
            simp_times += t;
            simp_n += 1;
        }
        s.mean_predict_seconds += r.predict_seconds;
    }
    if kept > 0 {
        let k = kept as f64;
        s.mean_abs_compliance_error /= k;
        s.mean_compliance_error /= k;
        s.mean_pixel_values_error /= k;
        s.mean_pixel_accuracy /= k;
        s.mean_volume_fraction_error /= k;
    }
    if s.count > 0 {
        s.disconnection_pct = s.disconnected as f64 / s.count as f64;
        s.mean_predict_seconds /= s.count as f64;
    }
    if simp_n > 0 {
        s.mean_simp_seconds = Some(simp_times / simp_n as f64);
    }
    s
}

/// One problem instance for evaluation.
#[derive(Debug, Clone)]
pub struct EvalProblem {
    pub volume_fraction: f64,
    pub loads: LoadCase,
    pub input: InputTensor,
    pub target: DensityMap,
    pub simp_seconds: Option<f64>,
}

/// Pulls evaluation problems out of a stored dataset split.
pub fn problems_from_dataset(data: &Dataset, indices: &[u32]) -> Vec<EvalProblem> {
    indices
        .iter()
        .filter_map(|&i| data.samples.get(i as usize))
        .map(|s| EvalProblem {
            volume_fraction: s.meta.volume_fraction,
            loads: s.meta.loads.clone(),
            input: s.input.clone(),
            target: DensityMap::from_values(
                &data.mesh,
                s.target.iter().map(|&v| f64::from(v).clamp(DENSITY_MIN, 1.0)).collect(),
            )
            .expect("stored target within bounds"),
            simp_seconds: None,
        })
        .collect()
}

/// Generates fresh evaluation problems for a (possibly unseen) boundary
/// condition, running the optimizer for targets and timing it.
#[allow(clippy::too_many_arguments)]
pub fn generate_problems(
    mesh: &MeshSpec,
    bc: BcKind,
    material: &Material,
    simp_template: &SimpConfig,
    channels: u32,
    count: u32,
    master_seed: u64,
    mut progress: impl FnMut(u32, u32),
) -> Result<Vec<EvalProblem>, EvalError> {
    let boundary = bc.boundary_condition();
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let mut rng = stream_rng(master_seed, "eval-problem", u64::from(i));
        let (f, loads) = crate::dataset::sample_conditions(mesh, &boundary, &mut rng);
        let input = crate::dataset::build_input(
            mesh,
            &boundary,
            material,
            f,
            &loads,
            channels,
            simp_template.penalty,
        )?;
        let config = SimpConfig { volume_fraction: f, ..*simp_template };
        let t0 = Instant::now();
        let result = simp::optimize(mesh, &boundary, &loads, material, &config)?;
        out.push(EvalProblem {
            volume_fraction: f,
            loads,
            input,
            target: result.densities,
            simp_seconds: Some(t0.elapsed().as_secs_f64()),
        });
        progress(i + 1, count);
    }
    Ok(out)
}

/// Evaluates a model over a set of problems. Per-record results stream to
/// `on_record` as they complete so partial output survives a failure.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_set(
    model: &mut Model<f32>,
    mesh: &MeshSpec,
    bc: BcKind,
    material: &Material,
    penalty: f64,
    threshold: f64,
    problems: &[EvalProblem],
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<(Vec<MetricsRecord>, Summary), EvalError> {
    let boundary = bc.boundary_condition();
    let mut records = Vec::with_capacity(problems.len());
    for (index, problem) in problems.iter().enumerate() {
        let t0 = Instant::now();
        let pred = crate::unet::predict(model, &problem.input)?;
        let predict_seconds = t0.elapsed().as_secs_f64();
        let (pixel_values_error, pixel_accuracy) = pixel_metrics(&pred, &problem.target)?;
        let vf_err = volume_fraction_error(&pred, &problem.target);
        let outcome = compliance_error(
            &pred,
            &problem.target,
            mesh,
            &boundary,
            &problem.loads,
            material,
            penalty,
            threshold,
        )?;
        let (disconnected, compliance_error) = match outcome {
            ComplianceOutcome::Disconnected => (true, None),
            ComplianceOutcome::Error(e) => (false, Some(e)),
        };
        let record = MetricsRecord {
            index,
            volume_fraction: problem.volume_fraction,
            disconnected,
            compliance_error,
            pixel_values_error,
            pixel_accuracy,
            volume_fraction_error: vf_err,
            simp_seconds: problem.simp_seconds,
            predict_seconds,
        };
        on_record(&record);
        records.push(record);
    }
    let summary = summarize(&records);
    Ok((records, summary))
}

/// Binarized pixel accuracy of predictions at several thresholds.
pub fn threshold_sensitivity(
    pairs: &[(DensityMap, DensityMap)],
    thresholds: &[f64],
) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let mut agree = 0usize;
            let mut total = 0usize;
            for (pred, target) in pairs {
                let pb = binarize(pred, t);
                let tb = binarize(target, 0.5);
                agree += pb.solid.iter().zip(tb.solid.iter()).filter(|(a, b)| a == b).count();
                total += pb.solid.len();
            }
            (t, agree as f64 / total.max(1) as f64)
        })
        .collect()
}

/// Writes an 8-bit binary PGM; solid (density 1) prints black.
pub fn write_pgm(map: &DensityMap, path: &Path) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "P5\n{} {}\n255", map.nelx(), map.nely())?;
    let bytes: Vec<u8> =
        map.values().iter().map(|&v| (255.0 * (1.0 - v)).round().clamp(0.0, 255.0) as u8).collect();
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Direction;

    fn map_from(mesh: &MeshSpec, values: &[f64]) -> DensityMap {
        DensityMap::from_values(mesh, values.iter().map(|&v| v.max(DENSITY_MIN)).collect())
            .unwrap()
    }

    #[test]
    fn binarize_uses_at_least_threshold() {
        let mesh = MeshSpec::new(2, 1).unwrap();
        let map = map_from(&mesh, &[0.5, 0.49]);
        let grid = binarize(&map, 0.5);
        assert_eq!(grid.solid, vec![true, false]);
        // Idempotent through the solid -> 1.0 / void -> min mapping.
        let again = binarize(
            &map_from(
                &mesh,
                &grid.solid.iter().map(|&s| if s { 1.0 } else { DENSITY_MIN }).collect::<Vec<_>>(),
            ),
            0.5,
        );
        assert_eq!(again, grid);
    }

    #[test]
    fn pixel_metrics_on_matching_and_inverted_maps() {
        let mesh = MeshSpec::new(2, 2).unwrap();
        let target = map_from(&mesh, &[1.0, 0.001, 1.0, 0.001]);
        let (err, acc) = pixel_metrics(&target, &target).unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(acc, 1.0);
        let inverted = map_from(&mesh, &[0.001, 1.0, 0.001, 1.0]);
        let (_, acc) = pixel_metrics(&inverted, &target).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn volume_fraction_error_arithmetic() {
        let mesh = MeshSpec::new(2, 1).unwrap();
        let pred = map_from(&mesh, &[0.6, 0.5]);
        let target = map_from(&mesh, &[0.5, 0.5]);
        assert!((volume_fraction_error(&pred, &target) - 0.1).abs() < 1e-12);
        assert_eq!(volume_fraction_error(&target, &target), 0.0);
    }

    #[test]
    fn all_solid_cantilever_is_connected() {
        let mesh = MeshSpec::new(8, 4).unwrap();
        let grid = BinaryGrid { nelx: 8, nely: 4, solid: vec![true; 32] };
        let loads = LoadCase::single(mesh.node_id(8, 4), Direction::YNeg, 1.0);
        assert!(!detect_disconnection(&grid, &mesh, &BoundaryCondition::Cantilever, &loads));
    }

    #[test]
    fn void_column_between_support_and_load_disconnects() {
        let mesh = MeshSpec::new(8, 4).unwrap();
        let mut solid = vec![true; 32];
        for ey in 0..4 {
            solid[ey * 8 + 4] = false;
        }
        let grid = BinaryGrid { nelx: 8, nely: 4, solid };
        let loads = LoadCase::single(mesh.node_id(8, 4), Direction::YNeg, 1.0);
        assert!(detect_disconnection(&grid, &mesh, &BoundaryCondition::Cantilever, &loads));
    }

    #[test]
    fn fully_void_grid_is_disconnected() {
        let mesh = MeshSpec::new(4, 4).unwrap();
        let grid = BinaryGrid { nelx: 4, nely: 4, solid: vec![false; 16] };
        let loads = LoadCase::single(mesh.node_id(4, 4), Direction::YNeg, 1.0);
        assert!(detect_disconnection(&grid, &mesh, &BoundaryCondition::Cantilever, &loads));
    }

    #[test]
    fn exclusion_bookkeeping_adds_up() {
        let rec = |disc: bool, ce: Option<f64>| MetricsRecord {
            index: 0,
            volume_fraction: 0.5,
            disconnected: disc,
            compliance_error: ce,
            pixel_values_error: 0.1,
            pixel_accuracy: 0.9,
            volume_fraction_error: 0.01,
            simp_seconds: None,
            predict_seconds: 0.001,
        };
        let records =
            vec![rec(false, Some(0.2)), rec(true, None), rec(false, Some(-0.1)), rec(true, None)];
        let s = summarize(&records);
        assert_eq!(s.count, 4);
        assert_eq!(s.disconnected, 2);
        let with_compliance = records.iter().filter(|r| r.compliance_error.is_some()).count();
        assert_eq!(with_compliance + s.disconnected, s.count);
        assert!((s.disconnection_pct - 0.5).abs() < 1e-12);
        assert!((s.mean_abs_compliance_error - 0.15).abs() < 1e-12);
        assert!((s.mean_compliance_error - 0.05).abs() < 1e-12);
    }

    #[test]
    fn pgm_export_shape_and_polarity() {
        let mesh = MeshSpec::new(3, 2).unwrap();
        let map = map_from(&mesh, &[1.0, 0.5, 0.001, 1.0, 1.0, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        write_pgm(&map, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 6);
        assert_eq!(px[0], 0); // solid prints black
        assert_eq!(px[1], 128);
        assert_eq!(px[2], 255);
    }
}
