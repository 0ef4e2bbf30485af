//! Linear small-strain finite elements on 4-node constant-strain tetrahedra.
//!
//! Moduli are in kPa (N/mm²) and lengths in mm, so stiffness entries are N/mm,
//! forces N and displacements mm. Dirichlet constraints fix whole vertices to
//! zero and are applied by eliminating their rows and columns; the compliance
//! `K^-1` is never formed, every use goes through a sparse Cholesky solve.

mod envelope;

use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::mesh::{TetMesh, DEGENERACY_TOLERANCE};
use crate::{Error, Point3, Result};

pub use envelope::{reverse_cuthill_mckee, Envelope};

pub type ElementMatrix = SMatrix<f64, 12, 12>;
/// Voigt strain `[xx, yy, zz, 2xy, 2yz, 2zx]`.
pub type Strain = SVector<f64, 6>;

/// Number of entries in the lower triangle of a 12x12 element matrix.
const LOWER_12: usize = 78;

/// Per-element Young's modulus (kPa) and a single Poisson's ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialField {
    pub youngs_kpa: Vec<f64>,
    pub poisson: f64,
}

impl MaterialField {
    pub fn new(youngs_kpa: Vec<f64>, poisson: f64) -> Result<Self> {
        let field = Self { youngs_kpa, poisson };
        field.validate()?;
        Ok(field)
    }

    pub fn uniform(elements: usize, kpa: f64, poisson: f64) -> Result<Self> {
        Self::new(vec![kpa; elements], poisson)
    }

    pub fn validate(&self) -> Result<()> {
        check_poisson(self.poisson)?;
        check_moduli(&self.youngs_kpa)
    }
}

fn check_poisson(nu: f64) -> Result<()> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::Config(format!(
            "Poisson's ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    Ok(())
}

fn check_moduli(youngs: &[f64]) -> Result<()> {
    if let Some(e) = youngs.iter().position(|&y| !(y > 0.0 && y.is_finite())) {
        return Err(Error::Validation(format!(
            "element {e} has non-positive modulus {}",
            youngs[e]
        )));
    }
    Ok(())
}

/// Nodal forces (N), one vector per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCase {
    pub id: String,
    pub forces: Vec<Point3>,
}

impl LoadCase {
    pub fn zeros(id: impl Into<String>, vertices: usize) -> Self {
        Self {
            id: id.into(),
            forces: vec![[0.0; 3]; vertices],
        }
    }

    /// Spreads `total` equally over `vertices`.
    pub fn distributed(id: impl Into<String>, vertex_count: usize, vertices: &[usize], total: Point3) -> Self {
        let mut load = Self::zeros(id, vertex_count);
        let share = 1.0 / vertices.len().max(1) as f64;
        for &v in vertices {
            for k in 0..3 {
                load.forces[v][k] += total[k] * share;
            }
        }
        load
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            id: self.id.clone(),
            forces: self.forces.iter().map(|f| f.map(|c| alpha * c)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.forces.iter().flatten().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Nodal displacements (mm); exactly zero on fixed vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub u: Vec<Point3>,
}

impl DisplacementField {
    pub fn flat(&self) -> Vec<f64> {
        self.u.iter().flatten().copied().collect()
    }
}

/// Isotropic elasticity matrix in Voigt notation with engineering shear strains.
pub fn constitutive(youngs: f64, nu: f64) -> SMatrix<f64, 6, 6> {
    let c = youngs / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mut d = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = if i == j { c * (1.0 - nu) } else { c * nu };
        }
        d[(i + 3, i + 3)] = c * (1.0 - 2.0 * nu) / 2.0;
    }
    d
}

/// Gradients of the four linear shape functions and the tet volume.
pub fn shape_gradients(p: &[Point3; 4]) -> Result<([Point3; 4], f64)> {
    let edges = Matrix3::from_fn(|r, c| p[r + 1][c] - p[0][c]);
    let volume = edges.determinant() / 6.0;
    let scale = p
        .iter()
        .flat_map(|a| p.iter().map(move |b| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()))
        .fold(0.0, f64::max)
        .sqrt();
    let tolerance = DEGENERACY_TOLERANCE * scale.powi(3);
    if volume.abs() < tolerance {
        return Err(Error::DegenerateElement {
            element: 0,
            volume: volume.abs(),
            tolerance,
        });
    }
    let inv = edges
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular element Jacobian".into()))?;
    let mut grads = [[0.0; 3]; 4];
    for a in 0..3 {
        for k in 0..3 {
            grads[a + 1][k] = inv[(k, a)];
            grads[0][k] -= inv[(k, a)];
        }
    }
    Ok((grads, volume.abs()))
}

fn strain_displacement(grads: &[Point3; 4]) -> SMatrix<f64, 6, 12> {
    let mut b = SMatrix::<f64, 6, 12>::zeros();
    for (a, g) in grads.iter().enumerate() {
        let c = 3 * a;
        b[(0, c)] = g[0];
        b[(1, c + 1)] = g[1];
        b[(2, c + 2)] = g[2];
        b[(3, c)] = g[1];
        b[(3, c + 1)] = g[0];
        b[(4, c + 1)] = g[2];
        b[(4, c + 2)] = g[1];
        b[(5, c)] = g[2];
        b[(5, c + 2)] = g[0];
    }
    b
}

/// `V B^T D B` for a constant-strain tetrahedron.
pub fn element_stiffness(p: &[Point3; 4], youngs: f64, nu: f64) -> Result<ElementMatrix> {
    check_poisson(nu)?;
    check_moduli(&[youngs])?;
    let (grads, volume) = shape_gradients(p)?;
    let b = strain_displacement(&grads);
    Ok(b.transpose() * constitutive(youngs, nu) * b * volume)
}

/// Constant strain of one element under a displacement field.
pub fn element_strain(mesh: &TetMesh, element: usize, u: &DisplacementField) -> Result<Strain> {
    let (grads, _) = shape_gradients(&mesh.element_coords(element))?;
    let tet = mesh.tets()[element];
    let ue = SVector::<f64, 12>::from_fn(|i, _| u.u[tet[i / 3]][i % 3]);
    Ok(strain_displacement(&grads) * ue)
}

/// Sparsity, ordering and scatter maps shared by every stiffness matrix over
/// one mesh and one set of fixed vertices.
#[derive(Debug)]
struct ReducedLayout {
    vertex_count: usize,
    fixed: Vec<bool>,
    /// Global dof -> position in the reordered reduced system.
    reduced: Vec<Option<usize>>,
    envelope: Envelope,
    /// Per element, envelope offsets of its lower-triangle entries (`u32::MAX` for fixed dofs).
    scatter: Vec<[u32; LOWER_12]>,
}

fn lower_pairs() -> impl Iterator<Item = (usize, usize)> {
    (0..12).flat_map(|r| (0..=r).map(move |c| (r, c)))
}

impl ReducedLayout {
    fn new(mesh: &TetMesh, fixed_vertices: &[usize]) -> Result<Self> {
        let n = mesh.vertex_count();
        if fixed_vertices.is_empty() {
            return Err(Error::Singular(
                "no fixed vertices: the stiffness matrix has rigid-body null modes".into(),
            ));
        }
        let mut fixed = vec![false; n];
        for &v in fixed_vertices {
            if v >= n {
                return Err(Error::Validation(format!(
                    "fixed vertex {v} out of range for {n} vertices"
                )));
            }
            fixed[v] = true;
        }
        let adjacency = mesh.vertex_adjacency();
        let active: Vec<bool> = fixed.iter().map(|f| !f).collect();
        let order = reverse_cuthill_mckee(&adjacency, &active);
        let mut position = vec![usize::MAX; n];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        let mut reduced = vec![None; 3 * n];
        for v in 0..n {
            if !fixed[v] {
                for k in 0..3 {
                    reduced[3 * v + k] = Some(3 * position[v] + k);
                }
            }
        }
        let mut first = vec![0usize; 3 * order.len()];
        for (p, &v) in order.iter().enumerate() {
            let lowest = adjacency[v]
                .iter()
                .filter(|&&w| !fixed[w])
                .map(|&w| position[w])
                .fold(p, usize::min);
            for k in 0..3 {
                first[3 * p + k] = 3 * lowest;
            }
        }
        let envelope = Envelope::new(first);
        let scatter = mesh
            .tets()
            .iter()
            .map(|tet| {
                let mut map = [u32::MAX; LOWER_12];
                for (slot, (r, c)) in lower_pairs().enumerate() {
                    let gr = reduced[3 * tet[r / 3] + r % 3];
                    let gc = reduced[3 * tet[c / 3] + c % 3];
                    if let (Some(a), Some(b)) = (gr, gc) {
                        let (row, col) = if a >= b { (a, b) } else { (b, a) };
                        map[slot] = envelope
                            .offset(row, col)
                            .expect("element coupling lies inside the envelope")
                            as u32;
                    }
                }
                map
            })
            .collect();
        Ok(Self {
            vertex_count: n,
            fixed,
            reduced,
            envelope,
            scatter,
        })
    }

    fn check_load(&self, load: &LoadCase) -> Result<()> {
        if load.forces.len() != self.vertex_count {
            return Err(Error::Validation(format!(
                "load `{}` has {} force vectors for {} vertices",
                load.id,
                load.forces.len(),
                self.vertex_count
            )));
        }
        for (v, f) in load.forces.iter().enumerate() {
            if f.iter().any(|c| !c.is_finite()) {
                return Err(Error::Validation(format!(
                    "load `{}` has a non-finite force at vertex {v}",
                    load.id
                )));
            }
            if self.fixed[v] && f.iter().any(|&c| c != 0.0) {
                return Err(Error::Validation(format!(
                    "load `{}` applies force to fixed vertex {v}",
                    load.id
                )));
            }
        }
        Ok(())
    }
}

/// Precomputed forward model for one mesh, Poisson's ratio and set of fixed vertices.
///
/// Element matrices are linear in `E`, so they are stored for `E = 1` and
/// scaled during assembly. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    layout: Arc<ReducedLayout>,
    unit: Arc<Vec<[f64; LOWER_12]>>,
    tets: Arc<Vec<[usize; 4]>>,
    poisson: f64,
    fixed_vertices: Vec<usize>,
}

impl ForwardModel {
    pub fn new(mesh: &TetMesh, poisson: f64, fixed_vertices: &[usize]) -> Result<Self> {
        check_poisson(poisson)?;
        let layout = ReducedLayout::new(mesh, fixed_vertices)?;
        let unit = (0..mesh.element_count())
            .map(|e| {
                let k = element_stiffness(&mesh.element_coords(e), 1.0, poisson).map_err(|err| match err {
                    Error::DegenerateElement { volume, tolerance, .. } => Error::DegenerateElement {
                        element: e,
                        volume,
                        tolerance,
                    },
                    other => other,
                })?;
                let mut lower = [0.0; LOWER_12];
                for (slot, (r, c)) in lower_pairs().enumerate() {
                    lower[slot] = k[(r, c)];
                }
                Ok(lower)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fixed_vertices = fixed_vertices.to_vec();
        fixed_vertices.sort_unstable();
        fixed_vertices.dedup();
        Ok(Self {
            layout: Arc::new(layout),
            unit: Arc::new(unit),
            tets: Arc::new(mesh.tets().to_vec()),
            poisson,
            fixed_vertices,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.layout.vertex_count
    }

    pub fn element_count(&self) -> usize {
        self.unit.len()
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    pub fn fixed_vertices(&self) -> &[usize] {
        &self.fixed_vertices
    }

    pub fn is_fixed(&self, vertex: usize) -> bool {
        self.layout.fixed[vertex]
    }

    /// Dimension of the system after eliminating fixed dofs.
    pub fn reduced_dim(&self) -> usize {
        self.layout.envelope.dim()
    }

    /// Stored entries of the reduced envelope.
    pub fn envelope_len(&self) -> usize {
        self.layout.envelope.len()
    }

    fn check_youngs(&self, youngs: &[f64]) -> Result<()> {
        if youngs.len() != self.element_count() {
            return Err(Error::Validation(format!(
                "{} moduli for {} elements",
                youngs.len(),
                self.element_count()
            )));
        }
        check_moduli(youngs)
    }

    /// Assembles and factorizes the reduced system for per-element moduli (kPa).
    pub fn factorize(&self, youngs: &[f64]) -> Result<Factorization> {
        self.check_youngs(youngs)?;
        let mut values = vec![0.0; self.layout.envelope.len()];
        for ((map, unit), &e) in self.layout.scatter.iter().zip(self.unit.iter()).zip(youngs) {
            for (&o, &k) in map.iter().zip(unit.iter()) {
                if o != u32::MAX {
                    values[o as usize] += e * k;
                }
            }
        }
        self.layout.envelope.factorize(&mut values)?;
        Ok(Factorization {
            layout: Arc::clone(&self.layout),
            factor: values,
        })
    }

    /// Full `3n x 3n` stiffness matrix, with the fixed dofs recorded alongside.
    pub fn assemble(&self, youngs: &[f64]) -> Result<StiffnessSystem> {
        self.check_youngs(youngs)?;
        let dim = 3 * self.vertex_count();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
        for ((tet, unit), &e) in self.tets.iter().zip(self.unit.iter()).zip(youngs) {
            for (slot, (r, c)) in lower_pairs().enumerate() {
                let gr = 3 * tet[r / 3] + r % 3;
                let gc = 3 * tet[c / 3] + c % 3;
                let k = e * unit[slot];
                rows[gr].push((gc, k));
                if gr != gc {
                    rows[gc].push((gr, k));
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(StiffnessSystem {
            layout: Arc::clone(&self.layout),
            row_ptr,
            cols,
            vals,
        })
    }

    /// Solves every load case with one factorization.
    pub fn solve_patterns(&self, youngs: &[f64], loads: &[LoadCase]) -> Result<Vec<DisplacementField>> {
        let factor = self.factorize(youngs)?;
        loads.iter().map(|l| factor.solve(l)).collect()
    }
}

/// Cholesky factor of the reduced (free-dof) stiffness matrix. Immutable and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct Factorization {
    layout: Arc<ReducedLayout>,
    factor: Vec<f64>,
}

impl Factorization {
    pub fn solve(&self, load: &LoadCase) -> Result<DisplacementField> {
        let layout = &self.layout;
        layout.check_load(load)?;
        let mut rhs = vec![0.0; layout.envelope.dim()];
        for (dof, r) in layout.reduced.iter().enumerate() {
            if let Some(r) = *r {
                rhs[r] = load.forces[dof / 3][dof % 3];
            }
        }
        layout.envelope.solve_in_place(&self.factor, &mut rhs);
        let mut u = vec![[0.0; 3]; layout.vertex_count];
        for (dof, r) in layout.reduced.iter().enumerate() {
            if let Some(r) = *r {
                u[dof / 3][dof % 3] = rhs[r];
            }
        }
        for (v, d) in u.iter().enumerate() {
            if d.iter().any(|c| !c.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite displacement at vertex {v} for load `{}`",
                    load.id
                )));
            }
        }
        Ok(DisplacementField { u })
    }
}

/// Assembled global stiffness `K` (CSR, both triangles stored) and the dofs
/// that are eliminated before solving.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    layout: Arc<ReducedLayout>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl StiffnessSystem {
    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(i) => self.vals[range.start + i],
            Err(_) => 0.0,
        }
    }

    /// `(row, col, value)` for every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (r, self.cols[i], self.vals[i]))
        })
    }

    /// `K x` on the unconstrained system.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|i| self.vals[i] * x[self.cols[i]])
                    .sum()
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|K_ij - K_ji|` relative to `max |K|`.
    pub fn asymmetry(&self) -> f64 {
        let worst = self
            .entries()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max);
        worst / self.max_abs()
    }

    pub fn fixed_dofs(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&d| self.layout.reduced[d].is_none()).collect()
    }

    /// Residual `max_free |(K u - f)_i|` over the free dofs.
    pub fn free_residual(&self, u: &DisplacementField, load: &LoadCase) -> f64 {
        let ku = self.matvec(&u.flat());
        (0..self.dim())
            .filter(|&d| self.layout.reduced[d].is_some())
            .map(|d| (ku[d] - load.forces[d / 3][d % 3]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Factorizes the reduced matrix obtained by dropping fixed rows and columns.
    pub fn factorize(&self) -> Result<Factorization> {
        let layout = &self.layout;
        let mut values = vec![0.0; layout.envelope.len()];
        for (r, c, v) in self.entries() {
            if let (Some(a), Some(b)) = (layout.reduced[r], layout.reduced[c]) {
                if a >= b {
                    let o = layout.envelope.offset(a, b).ok_or_else(|| {
                        Error::Numerical(format!("entry ({r}, {c}) lies outside the envelope"))
                    })?;
                    values[o] += v;
                }
            }
        }
        layout.envelope.factorize(&mut values)?;
        Ok(Factorization {
            layout: Arc::clone(layout),
            factor: values,
        })
    }
}

/// Global stiffness for `material` with the given vertices fixed.
pub fn assemble(mesh: &TetMesh, material: &MaterialField, fixed_vertices: &[usize]) -> Result<StiffnessSystem> {
    material.validate()?;
    ForwardModel::new(mesh, material.poisson, fixed_vertices)?.assemble(&material.youngs_kpa)
}

pub fn solve_forward(system: &StiffnessSystem, load: &LoadCase) -> Result<DisplacementField> {
    system.factorize()?.solve(load)
}

/// Maps [`solve_forward`] over `loads`, factorizing once.
pub fn solve_patterns(system: &StiffnessSystem, loads: &[LoadCase]) -> Result<Vec<DisplacementField>> {
    if loads.is_empty() {
        return Ok(Vec::new());
    }
    let factor = system.factorize()?;
    loads.iter().map(|l| factor.solve(l)).collect()
}
