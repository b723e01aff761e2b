//! 2D plane-stress finite elements on a regular grid of unit bilinear quads.
//!
//! The mesh is `nelx` elements wide and `nely` elements tall. Nodes are
//! numbered column-major with y fastest (node 0 at the top-left corner,
//! walking down the first column), matching the convention of the classic
//! 88-line topology optimization MATLAB code so results can be cross-checked
//! against it. Each node carries two DOFs: `2*n` (x) and `2*n + 1` (y, up).

mod banded;

pub use banded::BandedMatrix;

use thiserror::Error;

/// Lower bound on element densities (Eq. 6 style bound that keeps the
/// optimizer away from zero while `Material::emin` keeps K nonsingular).
pub const DENSITY_MIN: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid mesh: nelx and nely must both be >= 1")]
    InvalidMesh,
    #[error("invalid material: need 0 < emin << e0 and 0 <= nu < 0.5")]
    InvalidMaterial,
    #[error("density out of bounds at element {index}: {value}")]
    DensityOutOfBounds { index: usize, value: f64 },
    #[error("invalid load case: {0}")]
    InvalidLoads(String),
    #[error("singular system: boundary conditions do not remove rigid-body modes")]
    SingularSystem,
    #[error("solve produced non-finite values")]
    NonFinite,
}

/// Regular rectangular design domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshSpec {
    pub nelx: usize,
    pub nely: usize,
}

impl MeshSpec {
    pub fn new(nelx: usize, nely: usize) -> Result<Self, FemError> {
        if nelx < 1 || nely < 1 {
            return Err(FemError::InvalidMesh);
        }
        Ok(Self { nelx, nely })
    }

    pub fn num_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn num_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    /// Node id at column `ix` (0..=nelx, left to right) and row `iy`
    /// (0..=nely, top to bottom).
    #[inline]
    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        ix * (self.nely + 1) + iy
    }

    /// Inverse of [`node_id`](Self::node_id): returns `(ix, iy)`.
    #[inline]
    pub fn node_pos(&self, node: usize) -> (usize, usize) {
        (node / (self.nely + 1), node % (self.nely + 1))
    }

    /// Corner nodes of element `(ex, ey)` (ey = 0 is the top element row) in
    /// the element-local order bottom-left, bottom-right, top-right, top-left
    /// (counter-clockwise, y pointing up).
    #[inline]
    pub fn element_nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        let top_left = self.node_id(ex, ey);
        [
            top_left + 1,
            top_left + self.nely + 2,
            top_left + self.nely + 1,
            top_left,
        ]
    }

    /// The 8 global DOFs of element `(ex, ey)` in the order matching
    /// [`element_stiffness`].
    #[inline]
    pub fn element_dofs(&self, ex: usize, ey: usize) -> [usize; 8] {
        let n = self.element_nodes(ex, ey);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    /// Nodes on the domain perimeter, in ascending node-id order.
    pub fn perimeter_nodes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for ix in 0..=self.nelx {
            for iy in 0..=self.nely {
                if ix == 0 || ix == self.nelx || iy == 0 || iy == self.nely {
                    out.push(self.node_id(ix, iy));
                }
            }
        }
        out
    }
}

/// Isotropic linear-elastic material for modified-SIMP interpolation
/// `E(x) = emin + x^p (e0 - emin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub e0: f64,
    pub emin: f64,
    pub nu: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self { e0: 1.0, emin: 1e-9, nu: 0.3 }
    }
}

impl Material {
    pub fn validate(&self) -> Result<(), FemError> {
        let ok = self.emin > 0.0
            && self.emin < 1e-3 * self.e0
            && self.e0.is_finite()
            && (0.0..0.5).contains(&self.nu);
        if ok { Ok(()) } else { Err(FemError::InvalidMaterial) }
    }

    /// Interpolated Young's modulus for a density `x` under penalty `p`.
    #[inline]
    pub fn youngs(&self, x: f64, penalty: f64) -> f64 {
        self.emin + x.powf(penalty) * (self.e0 - self.emin)
    }
}

/// Support layouts. The canonical node sets are:
/// cantilever = all left-edge nodes fully fixed; simply supported = bottom-left
/// pinned, bottom-right y-roller; continuous beam = bottom-left pinned,
/// bottom-middle and bottom-right y-rollers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryCondition {
    Cantilever,
    SimplySupported,
    ContinuousBeam,
    /// Explicit list of fixed global DOFs.
    Custom(Vec<usize>),
}

impl BoundaryCondition {
    /// Sorted, deduplicated list of fixed global DOFs.
    pub fn fixed_dofs(&self, mesh: &MeshSpec) -> Vec<usize> {
        let mut dofs = match self {
            BoundaryCondition::Cantilever => {
                let mut v = Vec::with_capacity(2 * (mesh.nely + 1));
                for iy in 0..=mesh.nely {
                    let n = mesh.node_id(0, iy);
                    v.push(2 * n);
                    v.push(2 * n + 1);
                }
                v
            }
            BoundaryCondition::SimplySupported => {
                let bl = mesh.node_id(0, mesh.nely);
                let br = mesh.node_id(mesh.nelx, mesh.nely);
                vec![2 * bl, 2 * bl + 1, 2 * br + 1]
            }
            BoundaryCondition::ContinuousBeam => {
                let bl = mesh.node_id(0, mesh.nely);
                let bm = mesh.node_id(mesh.nelx / 2, mesh.nely);
                let br = mesh.node_id(mesh.nelx, mesh.nely);
                vec![2 * bl, 2 * bl + 1, 2 * bm + 1, 2 * br + 1]
            }
            BoundaryCondition::Custom(dofs) => dofs.clone(),
        };
        dofs.sort_unstable();
        dofs.dedup();
        dofs
    }

    /// Nodes with at least one fixed DOF.
    pub fn fixed_nodes(&self, mesh: &MeshSpec) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.fixed_dofs(mesh).iter().map(|d| d / 2).collect();
        nodes.dedup();
        nodes
    }
}

/// Direction of a point load. Y points up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XPos,
    XNeg,
    YPos,
    YNeg,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::XPos,
        Direction::XNeg,
        Direction::YPos,
        Direction::YNeg,
    ];

    pub fn code(self) -> u8 {
        match self {
            Direction::XPos => 0,
            Direction::XNeg => 1,
            Direction::YPos => 2,
            Direction::YNeg => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Direction::XPos,
            1 => Direction::XNeg,
            2 => Direction::YPos,
            3 => Direction::YNeg,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Load {
    pub node: usize,
    pub direction: Direction,
    pub magnitude: f64,
}

/// A set of nodal point loads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadCase {
    pub loads: Vec<Load>,
}

impl LoadCase {
    pub fn single(node: usize, direction: Direction, magnitude: f64) -> Self {
        Self { loads: vec![Load { node, direction, magnitude }] }
    }

    /// Enforces the sampling-domain invariants: 1..=10 loads, nodes on the
    /// grid, positive magnitudes, and no load on a fixed DOF.
    pub fn validate(&self, mesh: &MeshSpec, bc: &BoundaryCondition) -> Result<(), FemError> {
        if self.loads.is_empty() || self.loads.len() > 10 {
            return Err(FemError::InvalidLoads(format!(
                "load count {} outside 1..=10",
                self.loads.len()
            )));
        }
        let fixed = bc.fixed_dofs(mesh);
        for load in &self.loads {
            if load.node >= mesh.num_nodes() {
                return Err(FemError::InvalidLoads(format!(
                    "node {} outside grid",
                    load.node
                )));
            }
            if !(load.magnitude > 0.0) {
                return Err(FemError::InvalidLoads(format!(
                    "magnitude {} not positive",
                    load.magnitude
                )));
            }
            let dof = match load.direction {
                Direction::XPos | Direction::XNeg => 2 * load.node,
                Direction::YPos | Direction::YNeg => 2 * load.node + 1,
            };
            if fixed.binary_search(&dof).is_ok() {
                return Err(FemError::InvalidLoads(format!(
                    "load on fixed DOF {dof}"
                )));
            }
        }
        Ok(())
    }

    /// Assembled global force vector.
    pub fn force_vector(&self, mesh: &MeshSpec) -> Vec<f64> {
        let mut f = vec![0.0; mesh.num_dofs()];
        for load in &self.loads {
            let (dof, sign) = match load.direction {
                Direction::XPos => (2 * load.node, 1.0),
                Direction::XNeg => (2 * load.node, -1.0),
                Direction::YPos => (2 * load.node + 1, 1.0),
                Direction::YNeg => (2 * load.node + 1, -1.0),
            };
            f[dof] += sign * load.magnitude;
        }
        f
    }
}

/// Per-element relative densities, row-major `(ey, ex)` with ey = 0 the top
/// element row. Entries live in `[DENSITY_MIN, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    nelx: usize,
    nely: usize,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn uniform(mesh: &MeshSpec, value: f64) -> Self {
        Self {
            nelx: mesh.nelx,
            nely: mesh.nely,
            values: vec![value; mesh.num_elements()],
        }
    }

    pub fn from_values(mesh: &MeshSpec, values: Vec<f64>) -> Result<Self, FemError> {
        if values.len() != mesh.num_elements() {
            return Err(FemError::InvalidMesh);
        }
        let map = Self { nelx: mesh.nelx, nely: mesh.nely, values };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), FemError> {
        for (i, &v) in self.values.iter().enumerate() {
            if !(DENSITY_MIN..=1.0).contains(&v) {
                return Err(FemError::DensityOutOfBounds { index: i, value: v });
            }
        }
        Ok(())
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Element density at `(ex, ey)`.
    #[inline]
    pub fn get(&self, ex: usize, ey: usize) -> f64 {
        self.values[ey * self.nelx + ex]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Nodal displacement and small-strain fields on the `(nely+1) x (nelx+1)`
/// node grid, row-major `(iy, ix)` with iy = 0 the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalFields {
    pub rows: usize,
    pub cols: usize,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub eps_x: Vec<f64>,
    pub eps_y: Vec<f64>,
    pub gamma_xy: Vec<f64>,
}

/// Element stiffness matrix `k_0` of a unit-square bilinear quad in plane
/// stress with E = 1, in the closed form used by the 88-line code. DOF order
/// is `element_dofs`: (BLx, BLy, BRx, BRy, TRx, TRy, TLx, TLy).
pub fn element_stiffness(material: &Material) -> [[f64; 8]; 8] {
    let nu = material.nu;
    #[rustfmt::skip]
    let a11: [[f64; 4]; 4] = [
        [12.0,  3.0, -6.0, -3.0],
        [ 3.0, 12.0,  3.0,  0.0],
        [-6.0,  3.0, 12.0, -3.0],
        [-3.0,  0.0, -3.0, 12.0],
    ];
    #[rustfmt::skip]
    let a12: [[f64; 4]; 4] = [
        [-6.0, -3.0,  0.0,  3.0],
        [-3.0, -6.0, -3.0, -6.0],
        [ 0.0, -3.0, -6.0,  3.0],
        [ 3.0, -6.0,  3.0, -6.0],
    ];
    #[rustfmt::skip]
    let b11: [[f64; 4]; 4] = [
        [-4.0,  3.0, -2.0,  9.0],
        [ 3.0, -4.0, -9.0,  4.0],
        [-2.0, -9.0, -4.0, -3.0],
        [ 9.0,  4.0, -3.0, -4.0],
    ];
    #[rustfmt::skip]
    let b12: [[f64; 4]; 4] = [
        [ 2.0, -3.0,  4.0, -9.0],
        [-3.0,  2.0,  9.0, -2.0],
        [ 4.0,  9.0,  2.0,  3.0],
        [-9.0, -2.0,  3.0,  2.0],
    ];
    let scale = 1.0 / (1.0 - nu * nu) / 24.0;
    let mut ke = [[0.0; 8]; 8];
    for i in 0..4 {
        for j in 0..4 {
            ke[i][j] = scale * (a11[i][j] + nu * b11[i][j]);
            ke[i][j + 4] = scale * (a12[i][j] + nu * b12[i][j]);
            ke[i + 4][j] = scale * (a12[j][i] + nu * b12[j][i]);
            ke[i + 4][j + 4] = scale * (a11[i][j] + nu * b11[i][j]);
        }
    }
    ke
}

/// Assembles the global stiffness into banded lower storage. No boundary
/// conditions applied.
pub fn assemble_banded(
    mesh: &MeshSpec,
    densities: &DensityMap,
    material: &Material,
    penalty: f64,
) -> BandedMatrix {
    let ke = element_stiffness(material);
    // Largest DOF-index spread inside one element.
    let half_bandwidth = 2 * mesh.nely + 5;
    let mut k = BandedMatrix::zeros(mesh.num_dofs(), half_bandwidth);
    for ey in 0..mesh.nely {
        for ex in 0..mesh.nelx {
            let e = material.youngs(densities.get(ex, ey), penalty);
            let dofs = mesh.element_dofs(ex, ey);
            for i in 0..8 {
                for j in 0..=i {
                    let (gi, gj) = (dofs[i], dofs[j]);
                    let (hi, lo) = if gi >= gj { (gi, gj) } else { (gj, gi) };
                    k.add(hi, lo, e * ke[i][j]);
                }
            }
        }
    }
    k
}

/// Dense global stiffness (no boundary conditions); intended for small
/// meshes in tests and diagnostics.
pub fn assemble_dense(
    mesh: &MeshSpec,
    densities: &DensityMap,
    material: &Material,
    penalty: f64,
) -> Vec<Vec<f64>> {
    let ke = element_stiffness(material);
    let n = mesh.num_dofs();
    let mut k = vec![vec![0.0; n]; n];
    for ey in 0..mesh.nely {
        for ex in 0..mesh.nelx {
            let e = material.youngs(densities.get(ex, ey), penalty);
            let dofs = mesh.element_dofs(ex, ey);
            for i in 0..8 {
                for j in 0..8 {
                    k[dofs[i]][dofs[j]] += e * ke[i][j];
                }
            }
        }
    }
    k
}

/// Assembles `K(x) U = F`, applies the boundary conditions and solves with a
/// banded Cholesky factorization plus iterative refinement. Fixed DOFs come
/// back exactly zero.
pub fn assemble_and_solve(
    mesh: &MeshSpec,
    bc: &BoundaryCondition,
    loads: &LoadCase,
    densities: &DensityMap,
    material: &Material,
    penalty: f64,
) -> Result<Vec<f64>, FemError> {
    densities.validate()?;
    let fixed = bc.fixed_dofs(mesh);
    if fixed.is_empty() {
        return Err(FemError::SingularSystem);
    }
    if fixed.iter().any(|&d| d >= mesh.num_dofs()) {
        return Err(FemError::InvalidLoads("fixed DOF outside grid".into()));
    }

    let mut k = assemble_banded(mesh, densities, material, penalty);
    let mut f = loads.force_vector(mesh);
    for &dof in &fixed {
        k.constrain_dof(dof);
        f[dof] = 0.0;
    }

    let f_norm = norm(&f);
    if f_norm == 0.0 {
        return Ok(vec![0.0; mesh.num_dofs()]);
    }

    let constrained = k.clone();
    let chol = k.cholesky().ok_or(FemError::SingularSystem)?;
    let mut u = chol.solve(&f);

    // Fixed-precision iterative refinement; with the void/solid stiffness
    // contrast the raw factorization residual can sit above the contract.
    let mut residual = vec![0.0; u.len()];
    for _ in 0..8 {
        constrained.residual(&u, &f, &mut residual);
        let r_norm = norm(&residual);
        if !r_norm.is_finite() {
            return Err(FemError::NonFinite);
        }
        if r_norm <= 1e-12 * f_norm {
            break;
        }
        let delta = chol.solve(&residual);
        for (ui, di) in u.iter_mut().zip(delta.iter()) {
            *ui += di;
        }
    }

    if u.iter().any(|v| !v.is_finite()) {
        return Err(FemError::NonFinite);
    }
    Ok(u)
}

/// Compliance `sum_e E(x_e) u_e^T k_0 u_e`.
pub fn compliance(
    mesh: &MeshSpec,
    densities: &DensityMap,
    material: &Material,
    penalty: f64,
    u: &[f64],
) -> f64 {
    let ke = element_stiffness(material);
    let mut total = 0.0;
    for ey in 0..mesh.nely {
        for ex in 0..mesh.nelx {
            let e = material.youngs(densities.get(ex, ey), penalty);
            total += e * element_energy(mesh, &ke, u, ex, ey);
        }
    }
    total
}

/// `u_e^T k_0 u_e` for one element (the unit-modulus strain energy used by
/// both compliance and the SIMP sensitivities).
pub fn element_energy(
    mesh: &MeshSpec,
    ke: &[[f64; 8]; 8],
    u: &[f64],
    ex: usize,
    ey: usize,
) -> f64 {
    let dofs = mesh.element_dofs(ex, ey);
    let ue: [f64; 8] = std::array::from_fn(|i| u[dofs[i]]);
    let mut acc = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += ke[i][j] * ue[j];
        }
        acc += ue[i] * row;
    }
    acc
}

// Derivatives of the bilinear shape functions on the unit square at local
// coordinates (xi, eta) in [-1, 1]^2; node order BL, BR, TR, TL; the factor 2
// maps the reference square onto the unit element.
#[inline]
fn shape_derivatives(xi: f64, eta: f64) -> ([f64; 4], [f64; 4]) {
    let dx = [
        -0.5 * (1.0 - eta),
        0.5 * (1.0 - eta),
        0.5 * (1.0 + eta),
        -0.5 * (1.0 + eta),
    ];
    let dy = [
        -0.5 * (1.0 - xi),
        -0.5 * (1.0 + xi),
        0.5 * (1.0 + xi),
        0.5 * (1.0 - xi),
    ];
    (dx, dy)
}

/// Recovers nodal displacement and strain fields from a global displacement
/// vector. Strains at a node average the shape-derivative evaluation of every
/// adjacent element at that node (corners see 1 element, edges 2, interior 4).
pub fn nodal_fields(mesh: &MeshSpec, u: &[f64]) -> NodalFields {
    let rows = mesh.nely + 1;
    let cols = mesh.nelx + 1;
    let mut fields = NodalFields {
        rows,
        cols,
        ux: vec![0.0; rows * cols],
        uy: vec![0.0; rows * cols],
        eps_x: vec![0.0; rows * cols],
        eps_y: vec![0.0; rows * cols],
        gamma_xy: vec![0.0; rows * cols],
    };
    for iy in 0..rows {
        for ix in 0..cols {
            let node = mesh.node_id(ix, iy);
            let at = iy * cols + ix;
            fields.ux[at] = u[2 * node];
            fields.uy[at] = u[2 * node + 1];

            let mut eps_x = 0.0;
            let mut eps_y = 0.0;
            let mut gamma = 0.0;
            let mut count = 0.0;
            for ey in iy.saturating_sub(1)..=iy.min(mesh.nely - 1) {
                if ey + 1 < iy || ey > iy {
                    continue;
                }
                for ex in ix.saturating_sub(1)..=ix.min(mesh.nelx - 1) {
                    if ex + 1 < ix || ex > ix {
                        continue;
                    }
                    // Local coordinates of this node inside element (ex, ey):
                    // xi = -1 on the element's left edge, eta = -1 on its
                    // bottom edge (iy = ey + 1).
                    let xi = if ix == ex { -1.0 } else { 1.0 };
                    let eta = if iy == ey + 1 { -1.0 } else { 1.0 };
                    let (dx, dy) = shape_derivatives(xi, eta);
                    let nodes = mesh.element_nodes(ex, ey);
                    for (i, &n) in nodes.iter().enumerate() {
                        let (uxn, uyn) = (u[2 * n], u[2 * n + 1]);
                        eps_x += dx[i] * uxn;
                        eps_y += dy[i] * uyn;
                        gamma += dy[i] * uxn + dx[i] * uyn;
                    }
                    count += 1.0;
                }
            }
            fields.eps_x[at] = eps_x / count;
            fields.eps_y[at] = eps_y / count;
            fields.gamma_xy[at] = gamma / count;
        }
    }
    fields
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn element_stiffness_is_symmetric() {
        for nu in [0.0, 0.2, 0.3, 0.45] {
            let ke = element_stiffness(&Material { nu, ..Material::default() });
            for i in 0..8 {
                for j in 0..8 {
                    assert_eq!(ke[i][j], ke[j][i], "asymmetry at ({i},{j}) nu={nu}");
                }
            }
        }
    }

    #[test]
    fn element_stiffness_annihilates_rigid_translations() {
        let ke = element_stiffness(&Material::default());
        let tx = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ty = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        for u in [tx, ty] {
            for i in 0..8 {
                let r: f64 = (0..8).map(|j| ke[i][j] * u[j]).sum();
                assert!(r.abs() < 1e-14, "row {i} residual {r}");
            }
        }
    }

    #[test]
    fn element_stiffness_top_left_entry_matches_coefficient_form() {
        // KE[0][0] = (1/2 - nu/6) / (1 - nu^2) in the classic coefficient
        // notation.
        let m = Material::default();
        let ke = element_stiffness(&m);
        let expected = (0.5 - m.nu / 6.0) / (1.0 - m.nu * m.nu);
        assert_relative_eq!(ke[0][0], expected, epsilon = 1e-15);
    }

    #[test]
    fn zero_loads_give_zero_displacement() {
        let mesh = MeshSpec::new(4, 3).unwrap();
        let u = assemble_and_solve(
            &mesh,
            &BoundaryCondition::Cantilever,
            &LoadCase::default(),
            &DensityMap::uniform(&mesh, 1.0),
            &Material::default(),
            3.0,
        )
        .unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_fixed_dofs_is_singular() {
        let mesh = MeshSpec::new(2, 2).unwrap();
        let err = assemble_and_solve(
            &mesh,
            &BoundaryCondition::Custom(vec![]),
            &LoadCase::single(mesh.node_id(2, 2), Direction::YNeg, 1.0),
            &DensityMap::uniform(&mesh, 1.0),
            &Material::default(),
            3.0,
        )
        .unwrap_err();
        assert!(matches!(err, FemError::SingularSystem));
    }

    #[test]
    fn compliance_is_zero_for_zero_displacement() {
        let mesh = MeshSpec::new(3, 2).unwrap();
        let u = vec![0.0; mesh.num_dofs()];
        let c = compliance(
            &mesh,
            &DensityMap::uniform(&mesh, 0.5),
            &Material::default(),
            3.0,
            &u,
        );
        assert_eq!(c, 0.0);
    }

    #[test]
    fn compliance_scales_quadratically_with_load() {
        let mesh = MeshSpec::new(6, 4).unwrap();
        let material = Material::default();
        let densities = DensityMap::uniform(&mesh, 0.7);
        let bc = BoundaryCondition::Cantilever;
        let tip = mesh.node_id(mesh.nelx, mesh.nely);
        let c1 = {
            let loads = LoadCase::single(tip, Direction::YNeg, 1.0);
            let u = assemble_and_solve(&mesh, &bc, &loads, &densities, &material, 3.0).unwrap();
            compliance(&mesh, &densities, &material, 3.0, &u)
        };
        let c2 = {
            let loads = LoadCase::single(tip, Direction::YNeg, 2.0);
            let u = assemble_and_solve(&mesh, &bc, &loads, &densities, &material, 3.0).unwrap();
            compliance(&mesh, &densities, &material, 3.0, &u)
        };
        assert_relative_eq!(c2, 4.0 * c1, max_relative = 1e-10);
    }

    #[test]
    fn compliance_equals_u_dot_f() {
        let mesh = MeshSpec::new(5, 4).unwrap();
        let material = Material::default();
        let densities = DensityMap::uniform(&mesh, 0.6);
        let bc = BoundaryCondition::Cantilever;
        let loads = LoadCase {
            loads: vec![
                Load { node: mesh.node_id(5, 4), direction: Direction::YNeg, magnitude: 1.0 },
                Load { node: mesh.node_id(5, 0), direction: Direction::XPos, magnitude: 0.5 },
            ],
        };
        let u = assemble_and_solve(&mesh, &bc, &loads, &densities, &material, 3.0).unwrap();
        let c = compliance(&mesh, &densities, &material, 3.0, &u);
        let f = loads.force_vector(&mesh);
        let utf: f64 = u.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(c, utf, max_relative = 1e-8);
    }

    #[test]
    fn solution_invariant_under_load_permutation() {
        let mesh = MeshSpec::new(6, 3).unwrap();
        let material = Material::default();
        let densities = DensityMap::uniform(&mesh, 0.5);
        let bc = BoundaryCondition::Cantilever;
        let loads = vec![
            Load { node: mesh.node_id(6, 3), direction: Direction::YNeg, magnitude: 1.0 },
            Load { node: mesh.node_id(6, 0), direction: Direction::XNeg, magnitude: 1.0 },
            Load { node: mesh.node_id(3, 0), direction: Direction::YPos, magnitude: 1.0 },
        ];
        let u1 = assemble_and_solve(
            &mesh,
            &bc,
            &LoadCase { loads: loads.clone() },
            &densities,
            &material,
            3.0,
        )
        .unwrap();
        let mut rev = loads;
        rev.reverse();
        let u2 =
            assemble_and_solve(&mesh, &bc, &LoadCase { loads: rev }, &densities, &material, 3.0)
                .unwrap();
        for (a, b) in u1.iter().zip(u2.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn uniform_stretch_recovers_unit_strain() {
        let mesh = MeshSpec::new(3, 2).unwrap();
        // ux = x coordinate, uy = 0.
        let mut u = vec![0.0; mesh.num_dofs()];
        for ix in 0..=mesh.nelx {
            for iy in 0..=mesh.nely {
                u[2 * mesh.node_id(ix, iy)] = ix as f64;
            }
        }
        let fields = nodal_fields(&mesh, &u);
        for v in &fields.eps_x {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
        for v in fields.eps_y.iter().chain(fields.gamma_xy.iter()) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_rotation_has_zero_strain() {
        let mesh = MeshSpec::new(4, 3).unwrap();
        // Small-angle rotation: ux = -theta * y, uy = theta * x.
        let theta = 1e-3;
        let mut u = vec![0.0; mesh.num_dofs()];
        for ix in 0..=mesh.nelx {
            for iy in 0..=mesh.nely {
                let n = mesh.node_id(ix, iy);
                let y = (mesh.nely - iy) as f64;
                u[2 * n] = -theta * y;
                u[2 * n + 1] = theta * ix as f64;
            }
        }
        let fields = nodal_fields(&mesh, &u);
        for v in fields
            .eps_x
            .iter()
            .chain(fields.eps_y.iter())
            .chain(fields.gamma_xy.iter())
        {
            assert!(v.abs() < 1e-15, "strain {v} under rigid rotation");
        }
    }

    #[test]
    fn load_on_fixed_dof_is_rejected() {
        let mesh = MeshSpec::new(4, 4).unwrap();
        let bc = BoundaryCondition::Cantilever;
        let bad = LoadCase::single(mesh.node_id(0, 2), Direction::XPos, 1.0);
        assert!(bad.validate(&mesh, &bc).is_err());
        let ok = LoadCase::single(mesh.node_id(4, 2), Direction::XPos, 1.0);
        assert!(ok.validate(&mesh, &bc).is_ok());
    }

    #[test]
    fn density_bounds_are_enforced() {
        let mesh = MeshSpec::new(2, 2).unwrap();
        assert!(DensityMap::from_values(&mesh, vec![0.5; 4]).is_ok());
        assert!(DensityMap::from_values(&mesh, vec![0.5, 0.5, 0.5, 0.0]).is_err());
        assert!(DensityMap::from_values(&mesh, vec![0.5, 1.1, 0.5, 0.5]).is_err());
    }
}
