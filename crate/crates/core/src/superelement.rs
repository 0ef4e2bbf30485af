//! Superelements: clusters of tetrahedra sharing one modulus, each with a
//! movable center. Elements belong to the nearest center by centroid distance.

use serde::{Deserialize, Serialize};

use crate::mesh::TetMesh;
use crate::{Error, Point3, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperelementSet {
    pub centers: Vec<Point3>,
    pub centers0: Vec<Point3>,
    pub e_kpa: Vec<f64>,
    pub assignment: Vec<usize>,
}

impl SuperelementSet {
    /// Superelements at `centers` (also the initial centers) with uniform modulus.
    pub fn from_centers(mesh: &TetMesh, centers: Vec<Point3>, e_init: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("at least one superelement center is required".into()));
        }
        if !(e_init > 0.0 && e_init.is_finite()) {
            return Err(Error::Config(format!("initial modulus must be positive, got {e_init}")));
        }
        let assignment = assign_elements(mesh, &centers);
        Ok(Self {
            centers0: centers.clone(),
            e_kpa: vec![e_init; centers.len()],
            centers,
            assignment,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self, element_count: usize) -> Result<()> {
        let k = self.centers.len();
        if k == 0 || self.centers0.len() != k || self.e_kpa.len() != k {
            return Err(Error::Validation(format!(
                "inconsistent superelement lengths: {} centers, {} initial centers, {} moduli",
                k,
                self.centers0.len(),
                self.e_kpa.len()
            )));
        }
        if let Some(i) = self.e_kpa.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Validation(format!(
                "superelement {i} has non-positive modulus {}",
                self.e_kpa[i]
            )));
        }
        if self.assignment.len() != element_count {
            return Err(Error::Validation(format!(
                "assignment covers {} of {element_count} elements",
                self.assignment.len()
            )));
        }
        if let Some(e) = self.assignment.iter().position(|&s| s >= k) {
            return Err(Error::Validation(format!(
                "element {e} assigned to missing superelement {}",
                self.assignment[e]
            )));
        }
        Ok(())
    }

    /// Number of member elements per superelement.
    pub fn member_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.len()];
        for &s in &self.assignment {
            counts[s] += 1;
        }
        counts
    }

    /// Superelements with no member elements.
    pub fn empty_superelements(&self) -> Vec<usize> {
        self.member_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `gx * gy * gz` centers at the middles of an equal tiling of the mesh
/// bounding box, ordered x fastest.
pub fn grid_centers(mesh: &TetMesh, counts: [usize; 3]) -> Result<Vec<Point3>> {
    if counts.contains(&0) {
        return Err(Error::Config(format!("superelement grid counts must be >= 1, got {counts:?}")));
    }
    let (lo, hi) = mesh.bounding_box();
    let mut centers = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                centers.push(std::array::from_fn(|a| {
                    lo[a] + (hi[a] - lo[a]) * (idx[a] as f64 + 0.5) / counts[a] as f64
                }));
            }
        }
    }
    Ok(centers)
}

/// Equidistant initial layout with `C0 = C` and uniform modulus `e_init`.
pub fn init_grid_centers(mesh: &TetMesh, counts: [usize; 3], e_init: f64) -> Result<SuperelementSet> {
    SuperelementSet::from_centers(mesh, grid_centers(mesh, counts)?, e_init)
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Nearest center (Euclidean, from element centroids); ties go to the lowest index.
pub fn assign_points(centroids: &[Point3], centers: &[Point3]) -> Vec<usize> {
    centroids
        .iter()
        .map(|c| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, s) in centers.iter().enumerate() {
                let d = dist2(c, s);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

pub fn assign_elements(mesh: &TetMesh, centers: &[Point3]) -> Vec<usize> {
    assign_points(&mesh.centroids(), centers)
}

/// Per-element moduli `E_e = E_se[assignment[e]]`.
pub fn propagate(se: &SuperelementSet, element_count: usize) -> Result<Vec<f64>> {
    if se.assignment.len() != element_count {
        return Err(Error::Validation(format!(
            "assignment covers {} of {element_count} elements",
            se.assignment.len()
        )));
    }
    se.assignment
        .iter()
        .enumerate()
        .map(|(e, &s)| {
            se.e_kpa.get(s).copied().ok_or_else(|| {
                Error::Validation(format!("element {e} assigned to missing superelement {s}"))
            })
        })
        .collect()
}

/// Frobenius norm of the stacked center displacements `||C - C0||_F` (mm).
pub fn center_penalty(centers: &[Point3], centers0: &[Point3]) -> Result<f64> {
    if centers.len() != centers0.len() {
        return Err(Error::Validation(format!(
            "{} centers vs {} initial centers",
            centers.len(),
            centers0.len()
        )));
    }
    Ok(centers.iter().zip(centers0).map(|(a, b)| dist2(a, b)).sum::<f64>().sqrt())
}

/// Named initial center allocations, given as fractions of the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterLayout {
    /// Equal tiling with the given counts per axis.
    Grid([usize; 3]),
    /// Four centers packed toward the low-x, low-y corner.
    CornerBiased,
    /// Eight centers along the two y-edges.
    EdgeBiased,
    Grid2x2x2,
    Grid3x3,
    /// Explicit coordinates (mm).
    Explicit(Vec<Point3>),
}

impl CenterLayout {
    pub fn centers(&self, mesh: &TetMesh) -> Result<Vec<Point3>> {
        let (lo, hi) = mesh.bounding_box();
        let at = |f: [f64; 3]| -> Point3 { std::array::from_fn(|a| lo[a] + f[a] * (hi[a] - lo[a])) };
        match self {
            CenterLayout::Grid(counts) => grid_centers(mesh, *counts),
            CenterLayout::CornerBiased => Ok([0.125, 0.375]
                .iter()
                .flat_map(|&y| [0.125, 0.375].map(|x| at([x, y, 0.5])))
                .collect()),
            CenterLayout::EdgeBiased => Ok([0.125, 0.875]
                .iter()
                .flat_map(|&y| [0.125, 0.375, 0.625, 0.875].map(|x| at([x, y, 0.5])))
                .collect()),
            CenterLayout::Grid2x2x2 => grid_centers(mesh, [2, 2, 2]),
            CenterLayout::Grid3x3 => grid_centers(mesh, [3, 3, 1]),
            CenterLayout::Explicit(points) => {
                if points.is_empty() {
                    return Err(Error::Config("explicit center layout is empty".into()));
                }
                Ok(points.clone())
            }
        }
    }
}
