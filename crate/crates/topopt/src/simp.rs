//! SIMP compliance minimization: sensitivity analysis, density filtering and
//! the optimality-criteria update, following the conventions of the 88-line
//! MATLAB code (density filter, OC with move limit 0.2 and damping 0.5).

use crate::fem::{
    self, assemble_and_solve, compliance, element_energy, element_stiffness, BoundaryCondition,
    DensityMap, FemError, LoadCase, Material, MeshSpec, DENSITY_MIN,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimpError {
    #[error("invalid SIMP configuration: {0}")]
    InvalidConfig(String),
    #[error("optimality-criteria bisection failed to bracket the volume constraint")]
    BisectionFailure,
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// SIMP run parameters. `volume_fraction` may be 1.0 for the degenerate
/// all-solid case; training-range problems use [0.2, 0.8].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpConfig {
    pub volume_fraction: f64,
    pub penalty: f64,
    pub filter_radius: f64,
    pub move_limit: f64,
    pub damping: f64,
    pub convergence_tol: f64,
    pub max_iterations: u32,
}

impl Default for SimpConfig {
    fn default() -> Self {
        Self {
            volume_fraction: 0.5,
            penalty: 3.0,
            filter_radius: 1.5,
            move_limit: 0.2,
            damping: 0.5,
            convergence_tol: 0.01,
            max_iterations: 200,
        }
    }
}

impl SimpConfig {
    pub fn with_volume_fraction(volume_fraction: f64) -> Self {
        Self { volume_fraction, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimpError> {
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(SimpError::InvalidConfig(format!(
                "volume fraction {} outside (0, 1]",
                self.volume_fraction
            )));
        }
        if self.penalty < 1.0 {
            return Err(SimpError::InvalidConfig(format!("penalty {} < 1", self.penalty)));
        }
        if self.filter_radius < 1.0 {
            return Err(SimpError::InvalidConfig(format!(
                "filter radius {} < 1",
                self.filter_radius
            )));
        }
        if !(self.move_limit > 0.0 && self.damping > 0.0 && self.convergence_tol > 0.0) {
            return Err(SimpError::InvalidConfig("nonpositive loop parameter".into()));
        }
        Ok(())
    }
}

/// Cone-weighted density filter over element pairs within `rmin` (centroid
/// distance, element units): weight `max(0, rmin - dist)`, rows normalized by
/// their sum.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    nelx: usize,
    nely: usize,
    offsets: Vec<usize>,
    neighbors: Vec<(u32, f64)>,
    row_sum: Vec<f64>,
}

impl FilterOperator {
    pub fn build(mesh: &MeshSpec, rmin: f64) -> Self {
        let (nelx, nely) = (mesh.nelx, mesh.nely);
        let reach = (rmin.ceil() as isize - 1).max(0);
        let n = nelx * nely;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut row_sum = Vec::with_capacity(n);
        offsets.push(0);
        for ey in 0..nely as isize {
            for ex in 0..nelx as isize {
                let mut sum = 0.0;
                for jy in (ey - reach).max(0)..=(ey + reach).min(nely as isize - 1) {
                    for jx in (ex - reach).max(0)..=(ex + reach).min(nelx as isize - 1) {
                        let dist = (((ex - jx) * (ex - jx) + (ey - jy) * (ey - jy)) as f64).sqrt();
                        let w = rmin - dist;
                        if w > 0.0 {
                            neighbors.push(((jy * nelx as isize + jx) as u32, w));
                            sum += w;
                        }
                    }
                }
                row_sum.push(sum);
                offsets.push(neighbors.len());
            }
        }
        Self { nelx, nely, offsets, neighbors, row_sum }
    }

    pub fn num_elements(&self) -> usize {
        self.nelx * self.nely
    }

    /// Normalized weighted average: `out_i = sum_j w_ij f_j / sum_j w_ij`.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.num_elements());
        let mut out = vec![0.0; field.len()];
        for i in 0..field.len() {
            let mut acc = 0.0;
            for &(j, w) in &self.neighbors[self.offsets[i]..self.offsets[i + 1]] {
                acc += w * field[j as usize];
            }
            out[i] = acc / self.row_sum[i];
        }
        out
    }

    /// Chain-rule weighting for sensitivities under the density filter:
    /// `out_i = sum_j w_ij (f_j / sum_k w_jk)`.
    pub fn apply_chain_rule(&self, field: &[f64]) -> Vec<f64> {
        assert_eq!(field.len(), self.num_elements());
        let scaled: Vec<f64> =
            field.iter().zip(self.row_sum.iter()).map(|(f, s)| f / s).collect();
        let mut out = vec![0.0; field.len()];
        for i in 0..field.len() {
            let mut acc = 0.0;
            for &(j, w) in &self.neighbors[self.offsets[i]..self.offsets[i + 1]] {
                acc += w * scaled[j as usize];
            }
            out[i] = acc;
        }
        out
    }
}

/// Compliance sensitivities `dc/dx_e = -p x_e^(p-1) (E0 - Emin) u_e^T k0 u_e`.
pub fn sensitivities(
    mesh: &MeshSpec,
    material: &Material,
    u: &[f64],
    densities: &DensityMap,
    penalty: f64,
) -> Vec<f64> {
    let ke = element_stiffness(material);
    let mut dc = vec![0.0; mesh.num_elements()];
    for ey in 0..mesh.nely {
        for ex in 0..mesh.nelx {
            let x = densities.get(ex, ey);
            let energy = element_energy(mesh, &ke, u, ex, ey);
            dc[ey * mesh.nelx + ex] =
                -penalty * x.powf(penalty - 1.0) * (material.e0 - material.emin) * energy;
        }
    }
    dc
}

/// One optimality-criteria step.
#[derive(Debug, Clone)]
pub struct OcStep {
    /// Updated design variables.
    pub design: Vec<f64>,
    /// Filtered (physical) densities whose volume meets the constraint.
    pub physical: Vec<f64>,
    /// `|V(x)/V0 - f|` achieved by the bisection.
    pub volume_error: f64,
}

/// Optimality-criteria update with bisection on the Lagrange multiplier.
/// `dc` and `dv` are the design-space (chain-rule weighted) sensitivities.
pub fn oc_update(
    x: &[f64],
    dc: &[f64],
    dv: &[f64],
    filter: &FilterOperator,
    config: &SimpConfig,
) -> Result<OcStep, SimpError> {
    let n = x.len() as f64;
    let target = config.volume_fraction;
    let move_limit = config.move_limit;
    let mut l1 = 0.0_f64;
    let mut l2 = 1e9_f64;
    let mut design = vec![0.0; x.len()];
    for _ in 0..256 {
        let lmid = 0.5 * (l1 + l2);
        for i in 0..x.len() {
            // B_e^damping with B_e = -dc / (dv * lmid); sensitivities are
            // nonpositive so the ratio is nonnegative.
            let b = (-dc[i] / (dv[i] * lmid)).max(0.0).powf(config.damping);
            let candidate = x[i] * b;
            design[i] = candidate
                .min(1.0)
                .min(x[i] + move_limit)
                .max(DENSITY_MIN)
                .max(x[i] - move_limit);
        }
        let mut physical = filter.apply(&design);
        // The weighted average can land a rounding error outside the bounds.
        for v in &mut physical {
            *v = v.clamp(DENSITY_MIN, 1.0);
        }
        let volume: f64 = physical.iter().sum::<f64>() / n;
        let volume_error = (volume - target).abs();
        if volume_error <= 1e-3 {
            return Ok(OcStep { design, physical, volume_error });
        }
        if volume > target {
            l1 = lmid;
        } else {
            l2 = lmid;
        }
        if (l2 - l1) <= f64::EPSILON * l2.max(1.0) {
            break;
        }
    }
    Err(SimpError::BisectionFailure)
}

/// Result of a full SIMP run.
#[derive(Debug, Clone)]
pub struct OptimizeResult {
    /// Final physical densities.
    pub densities: DensityMap,
    /// Compliance of the final densities (fresh solve).
    pub compliance: f64,
    /// Number of optimization iterations performed.
    pub iterations: u32,
    /// Worst `|V/V0 - f|` seen across all OC steps.
    pub max_volume_error: f64,
}

/// Full SIMP loop: solve, sensitivities, filter, OC update, until the max
/// density change drops below `convergence_tol` or `max_iterations` is hit.
pub fn optimize(
    mesh: &MeshSpec,
    bc: &BoundaryCondition,
    loads: &LoadCase,
    material: &Material,
    config: &SimpConfig,
) -> Result<OptimizeResult, SimpError> {
    config.validate()?;
    material.validate()?;
    loads.validate(mesh, bc)?;
    let filter = FilterOperator::build(mesh, config.filter_radius);
    let n = mesh.num_elements();
    let f = config.volume_fraction.max(DENSITY_MIN);
    let mut x = vec![f; n];
    let mut x_phys = x.clone();
    let ones = vec![1.0; n];
    let mut iterations = 0;
    let mut max_volume_error = 0.0_f64;

    loop {
        let dens = DensityMap::from_values(mesh, x_phys.clone())?;
        let u = assemble_and_solve(mesh, bc, loads, &dens, material, config.penalty)?;
        let dc = sensitivities(mesh, material, &u, &dens, config.penalty);
        let dc_f = filter.apply_chain_rule(&dc);
        let dv_f = filter.apply_chain_rule(&ones);
        let step = oc_update(&x, &dc_f, &dv_f, &filter, config)?;
        let change = x
            .iter()
            .zip(step.design.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        x = step.design;
        x_phys = step.physical;
        max_volume_error = max_volume_error.max(step.volume_error);
        iterations += 1;
        if change < config.convergence_tol || iterations >= config.max_iterations {
            break;
        }
    }

    let densities = DensityMap::from_values(mesh, x_phys)?;
    let u = assemble_and_solve(mesh, bc, loads, &densities, material, config.penalty)?;
    let c = compliance(mesh, &densities, material, config.penalty, &u);
    if !c.is_finite() {
        return Err(SimpError::Fem(fem::FemError::NonFinite));
    }
    Ok(OptimizeResult { densities, compliance: c, iterations, max_volume_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Direction;
    use approx::assert_relative_eq;

    #[test]
    fn constant_field_is_filter_invariant() {
        let mesh = MeshSpec::new(7, 5).unwrap();
        let filter = FilterOperator::build(&mesh, 1.5);
        let field = vec![0.37; mesh.num_elements()];
        for v in filter.apply(&field) {
            assert_relative_eq!(v, 0.37, epsilon = 1e-14);
        }
    }

    #[test]
    fn small_radius_filter_is_identity() {
        let mesh = MeshSpec::new(5, 4).unwrap();
        let filter = FilterOperator::build(&mesh, 1.0);
        let field: Vec<f64> = (0..mesh.num_elements()).map(|i| i as f64 * 0.01).collect();
        assert_eq!(filter.apply(&field), field);
    }

    #[test]
    fn zero_displacement_gives_zero_sensitivities() {
        let mesh = MeshSpec::new(4, 4).unwrap();
        let u = vec![0.0; mesh.num_dofs()];
        let dc = sensitivities(
            &mesh,
            &Material::default(),
            &u,
            &DensityMap::uniform(&mesh, 0.5),
            3.0,
        );
        assert!(dc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sensitivities_are_nonpositive() {
        let mesh = MeshSpec::new(5, 3).unwrap();
        let material = Material::default();
        let densities = DensityMap::uniform(&mesh, 0.4);
        let loads = LoadCase::single(mesh.node_id(5, 3), Direction::YNeg, 1.0);
        let u = assemble_and_solve(
            &mesh,
            &BoundaryCondition::Cantilever,
            &loads,
            &densities,
            &material,
            3.0,
        )
        .unwrap();
        let dc = sensitivities(&mesh, &material, &u, &densities, 3.0);
        assert!(dc.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn uniform_inputs_keep_oc_output_uniform() {
        let mesh = MeshSpec::new(4, 4).unwrap();
        let filter = FilterOperator::build(&mesh, 1.5);
        let config = SimpConfig::with_volume_fraction(0.5);
        let n = mesh.num_elements();
        let x = vec![0.5; n];
        let dc = vec![-1.0; n];
        let dv = vec![1.0; n];
        let step = oc_update(&x, &dc, &dv, &filter, &config).unwrap();
        for v in &step.physical {
            assert_relative_eq!(*v, 0.5, epsilon = 2e-3);
        }
        let spread = step
            .physical
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(spread.1 - spread.0 < 1e-12, "non-uniform output {spread:?}");
    }

    #[test]
    fn oc_meets_volume_constraint_on_random_inputs() {
        let mesh = MeshSpec::new(6, 4).unwrap();
        let filter = FilterOperator::build(&mesh, 1.5);
        let n = mesh.num_elements();
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..20 {
            let f = 0.25 + 0.5 * next();
            let config = SimpConfig::with_volume_fraction(f);
            let x: Vec<f64> = (0..n).map(|_| (f + 0.2 * (next() - 0.5)).clamp(0.05, 1.0)).collect();
            let dc: Vec<f64> = (0..n).map(|_| -next() - 1e-3).collect();
            let dv = vec![1.0; n];
            let step = oc_update(&x, &dc, &dv, &filter, &config).unwrap();
            let vol: f64 = step.physical.iter().sum::<f64>() / n as f64;
            assert!((vol - f).abs() <= 1e-3, "case {case}: vol {vol} target {f}");
            for (old, new) in x.iter().zip(step.design.iter()) {
                assert!(*new >= DENSITY_MIN - 1e-15 && *new <= 1.0 + 1e-15);
                assert!((old - new).abs() <= config.move_limit + 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_full_volume_returns_all_solid_in_one_iteration() {
        let mesh = MeshSpec::new(8, 4).unwrap();
        let loads = LoadCase::single(mesh.node_id(8, 4), Direction::YNeg, 1.0);
        let config = SimpConfig::with_volume_fraction(1.0);
        let result = optimize(
            &mesh,
            &BoundaryCondition::Cantilever,
            &loads,
            &Material::default(),
            &config,
        )
        .unwrap();
        assert_eq!(result.iterations, 1);
        for &v in result.densities.values() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimization_is_deterministic() {
        let mesh = MeshSpec::new(8, 4).unwrap();
        let loads = LoadCase::single(mesh.node_id(8, 2), Direction::YNeg, 1.0);
        let config = SimpConfig::with_volume_fraction(0.4);
        let material = Material::default();
        let bc = BoundaryCondition::Cantilever;
        let a = optimize(&mesh, &bc, &loads, &material, &config).unwrap();
        let b = optimize(&mesh, &bc, &loads, &material, &config).unwrap();
        assert_eq!(a.densities.values(), b.densities.values());
        assert_eq!(a.compliance.to_bits(), b.compliance.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn optimized_compliance_beats_uniform_start() {
        let mesh = MeshSpec::new(10, 5).unwrap();
        let material = Material::default();
        let bc = BoundaryCondition::Cantilever;
        let cases = [
            (mesh.node_id(10, 5), Direction::YNeg, 0.5),
            (mesh.node_id(10, 0), Direction::YPos, 0.35),
            (mesh.node_id(10, 3), Direction::XPos, 0.6),
        ];
        for (node, dir, f) in cases {
            let loads = LoadCase::single(node, dir, 1.0);
            let config = SimpConfig::with_volume_fraction(f);
            let uniform = DensityMap::uniform(&mesh, f);
            let u0 =
                assemble_and_solve(&mesh, &bc, &loads, &uniform, &material, config.penalty)
                    .unwrap();
            let c0 = compliance(&mesh, &uniform, &material, config.penalty, &u0);
            let result = optimize(&mesh, &bc, &loads, &material, &config).unwrap();
            assert!(
                result.compliance <= c0,
                "optimize did not improve: {} vs start {c0}",
                result.compliance
            );
        }
    }

    #[test]
    fn volume_constraint_holds_every_iteration() {
        let mesh = MeshSpec::new(8, 4).unwrap();
        let loads = LoadCase::single(mesh.node_id(8, 4), Direction::YNeg, 1.0);
        let config = SimpConfig::with_volume_fraction(0.45);
        let result = optimize(
            &mesh,
            &BoundaryCondition::Cantilever,
            &loads,
            &Material::default(),
            &config,
        )
        .unwrap();
        assert!(result.max_volume_error <= 1e-3, "worst error {}", result.max_volume_error);
    }
}
