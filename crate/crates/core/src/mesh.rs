//! Tetrahedral meshes, rectangular plate generation and region maps.
//!
//! Plates are built on a regular grid of hexahedral cells, each split into six
//! tetrahedra around the cell diagonal from its lowest to its highest corner.
//! Because every cell uses the same diagonal the split is conforming.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result};

/// Relative degeneracy threshold, scaled by the cube of the mesh length scale.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    Loaded,
}

/// Vertices (mm) and 0-based tetrahedral connectivity.
///
/// Every tet has positive signed volume under its stored vertex ordering.
#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices: Vec<Point3>,
    tets: Vec<[usize; 4]>,
    provenance: Provenance,
    length_scale: f64,
}

impl TetMesh {
    /// Validates connectivity and element volumes. The degeneracy tolerance is
    /// `1e-12 * L^3` where `L` is the mean edge length of the mesh.
    pub fn new(vertices: Vec<Point3>, tets: Vec<[usize; 4]>, provenance: Provenance) -> Result<Self> {
        let n = vertices.len();
        if let Some(v) = vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Validation(format!("vertex {v} has a non-finite coordinate")));
        }
        for (e, tet) in tets.iter().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!(
                    "tet {e} references vertex {bad}, but the mesh has {n} vertices"
                )));
            }
            for a in 0..4 {
                for b in a + 1..4 {
                    if tet[a] == tet[b] {
                        return Err(Error::Validation(format!(
                            "tet {e} repeats vertex {}",
                            tet[a]
                        )));
                    }
                }
            }
        }
        let length_scale = mean_edge_length(&vertices, &tets);
        let tolerance = DEGENERACY_TOLERANCE * length_scale.powi(3);
        for (e, tet) in tets.iter().enumerate() {
            let p = tet.map(|i| vertices[i]);
            let volume = signed_volume(&p);
            if volume <= tolerance {
                return Err(Error::DegenerateElement {
                    element: e,
                    volume,
                    tolerance,
                });
            }
        }
        Ok(Self {
            vertices,
            tets,
            provenance,
            length_scale,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn element_count(&self) -> usize {
        self.tets.len()
    }

    /// Mean edge length, used to scale geometric tolerances.
    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn element_coords(&self, element: usize) -> [Point3; 4] {
        self.tets[element].map(|i| self.vertices[i])
    }

    pub fn centroid(&self, element: usize) -> Point3 {
        let p = self.element_coords(element);
        let mut c = [0.0; 3];
        for q in &p {
            for k in 0..3 {
                c[k] += q[k];
            }
        }
        c.map(|x| x / 4.0)
    }

    pub fn centroids(&self) -> Vec<Point3> {
        (0..self.element_count()).map(|e| self.centroid(e)).collect()
    }

    pub fn volume(&self, element: usize) -> f64 {
        signed_volume(&self.element_coords(element))
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Vertices lying on one face of the bounding box, in index order.
    pub fn vertices_on_face(&self, face: Face) -> Vec<usize> {
        let (lo, hi) = self.bounding_box();
        let (axis, value) = match face {
            Face::XMin => (0, lo[0]),
            Face::XMax => (0, hi[0]),
            Face::YMin => (1, lo[1]),
            Face::YMax => (1, hi[1]),
            Face::ZMin => (2, lo[2]),
            Face::ZMax => (2, hi[2]),
        };
        let tol = 1e-9 * self.length_scale;
        (0..self.vertex_count())
            .filter(|&v| (self.vertices[v][axis] - value).abs() <= tol)
            .collect()
    }

    /// Vertex adjacency through shared elements, sorted and deduplicated.
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count()];
        for tet in &self.tets {
            for &a in tet {
                for &b in tet {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Faces of an axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn det3(a: Point3, b: Point3, c: Point3) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// `det[v1-v0, v2-v0, v3-v0] / 6`.
pub fn signed_volume(p: &[Point3; 4]) -> f64 {
    det3(sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0])) / 6.0
}

/// Unsigned tet volume, rejecting volumes below `1e-12 * length_scale^3`.
pub fn tet_volume(p: &[Point3; 4], length_scale: f64) -> Result<f64> {
    let volume = signed_volume(p).abs();
    let tolerance = DEGENERACY_TOLERANCE * length_scale.powi(3);
    if volume < tolerance {
        return Err(Error::DegenerateElement {
            element: 0,
            volume,
            tolerance,
        });
    }
    Ok(volume)
}

fn mean_edge_length(vertices: &[Point3], tets: &[[usize; 4]]) -> f64 {
    if tets.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for tet in tets {
        for a in 0..4 {
            for b in a + 1..4 {
                let d = sub(vertices[tet[a]], vertices[tet[b]]);
                total += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            }
        }
    }
    total / (6 * tets.len()) as f64
}

/// Rectangular plate made of `nx * ny * nz` cubic cells of edge `cell_size` (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
}

fn default_cell_size() -> f64 {
    10.0
}

impl PlateSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, cell_size: f64) -> Self {
        Self { nx, ny, nz, cell_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Config(format!(
                "plate cell counts must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Config(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        Ok(())
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx + 1) * (j + (self.ny + 1) * k)
    }

    pub fn extent(&self) -> Point3 {
        [
            self.nx as f64 * self.cell_size,
            self.ny as f64 * self.cell_size,
            self.nz as f64 * self.cell_size,
        ]
    }
}

const AXIS_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Regular grid plate with `(nx+1)(ny+1)(nz+1)` vertices and `6 nx ny nz` tets.
///
/// Vertices and cells are ordered x fastest, then y, then z. The six tets of a
/// cell follow fixed axis permutations, so ordering is deterministic.
pub fn generate_plate(spec: &PlateSpec) -> Result<TetMesh> {
    spec.validate()?;
    let h = spec.cell_size;
    let mut vertices = Vec::with_capacity((spec.nx + 1) * (spec.ny + 1) * (spec.nz + 1));
    for k in 0..=spec.nz {
        for j in 0..=spec.ny {
            for i in 0..=spec.nx {
                vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * spec.nx * spec.ny * spec.nz);
    for k in 0..spec.nz {
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let corner = |d: [usize; 3]| spec.vertex_index(i + d[0], j + d[1], k + d[2]);
                for perm in AXIS_PERMUTATIONS {
                    // Monotone lattice path from the low corner to the high corner.
                    let mut step = [0usize; 3];
                    let mut path = [corner(step); 4];
                    for (n, &axis) in perm.iter().enumerate() {
                        step[axis] = 1;
                        path[n + 1] = corner(step);
                    }
                    let p = path.map(|v| vertices[v]);
                    if signed_volume(&p) < 0.0 {
                        path.swap(2, 3);
                    }
                    tets.push(path);
                }
            }
        }
    }
    TetMesh::new(vertices, tets, Provenance::Generated)
}

/// Per-element region labels and the label → Young's modulus (kPa) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    labels: Vec<u32>,
    table: BTreeMap<u32, f64>,
}

impl RegionMap {
    pub fn new(labels: Vec<u32>, table: BTreeMap<u32, f64>) -> Result<Self> {
        for (&label, &kpa) in &table {
            if !(kpa > 0.0 && kpa.is_finite()) {
                return Err(Error::Validation(format!(
                    "region {label} has non-positive modulus {kpa}"
                )));
            }
        }
        if let Some((e, l)) = labels.iter().enumerate().find(|(_, l)| !table.contains_key(l)) {
            return Err(Error::Validation(format!(
                "element {e} has label {l} with no modulus entry"
            )));
        }
        Ok(Self { labels, table })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn table(&self) -> &BTreeMap<u32, f64> {
        &self.table
    }

    /// Per-element Young's modulus (kPa).
    pub fn moduli(&self) -> Vec<f64> {
        self.labels.iter().map(|l| self.table[l]).collect()
    }

    pub fn elements_with_label(&self, label: u32) -> Vec<usize> {
        (0..self.labels.len()).filter(|&e| self.labels[e] == label).collect()
    }
}

/// Label of the region `(ix, iy, iz)` in a `gx * gy * gz` region grid, x fastest.
pub fn region_label(gx: usize, gy: usize, ix: usize, iy: usize, iz: usize) -> u32 {
    (ix + gx * (iy + gy * iz)) as u32
}

/// Labels each element by the equal grid region containing its centroid.
pub fn grid_region_map(
    mesh: &TetMesh,
    spec: &PlateSpec,
    regions: [usize; 3],
    table: BTreeMap<u32, f64>,
) -> Result<RegionMap> {
    spec.validate()?;
    let cells = [spec.nx, spec.ny, spec.nz];
    for axis in 0..3 {
        if regions[axis] == 0 || !cells[axis].is_multiple_of(regions[axis]) {
            return Err(Error::Config(format!(
                "region count {} does not divide cell count {} along axis {axis}",
                regions[axis], cells[axis]
            )));
        }
    }
    let (lo, _) = mesh.bounding_box();
    let labels = (0..mesh.element_count())
        .map(|e| {
            let c = mesh.centroid(e);
            let mut idx = [0usize; 3];
            for axis in 0..3 {
                let cell = (((c[axis] - lo[axis]) / spec.cell_size).floor().max(0.0) as usize)
                    .min(cells[axis] - 1);
                idx[axis] = cell / (cells[axis] / regions[axis]);
            }
            region_label(regions[0], regions[1], idx[0], idx[1], idx[2])
        })
        .collect();
    RegionMap::new(labels, table)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    vertices: Vec<Point3>,
    tets: Vec<[usize; 4]>,
}

/// Writes `{"vertices": [[x,y,z],...], "tets": [[a,b,c,d],...]}`.
///
/// Coordinates are written in shortest round-trip decimal form, so a reload
/// reproduces them bit for bit.
pub fn save_mesh(mesh: &TetMesh, path: impl AsRef<Path>) -> Result<()> {
    let file = MeshFile {
        vertices: mesh.vertices.clone(),
        tets: mesh.tets.clone(),
    };
    let text = serde_json::to_string(&file).map_err(Error::from_json)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TetMesh> {
    let text = fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<TetMesh> {
    let file: MeshFile = serde_json::from_str(text).map_err(Error::from_json)?;
    TetMesh::new(file.vertices, file.tets, Provenance::Loaded)
}

/// Legacy ASCII VTK unstructured grid (cell type 10) with optional per-cell scalars.
pub fn write_vtk<W: Write>(mesh: &TetMesh, cell_scalars: &[(&str, &[f64])], w: &mut W) -> Result<()> {
    for (name, values) in cell_scalars {
        if values.len() != mesh.element_count() {
            return Err(Error::Validation(format!(
                "cell field `{name}` has {} values for {} cells",
                values.len(),
                mesh.element_count()
            )));
        }
    }
    let n = mesh.vertex_count();
    let m = mesh.element_count();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "elastrec tetrahedral mesh")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {n} double")?;
    for p in &mesh.vertices {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    writeln!(w, "CELLS {m} {}", 5 * m)?;
    for t in &mesh.tets {
        writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(w, "CELL_TYPES {m}")?;
    for _ in 0..m {
        writeln!(w, "10")?;
    }
    if !cell_scalars.is_empty() {
        writeln!(w, "CELL_DATA {m}")?;
        for (name, values) in cell_scalars {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(w, "{v}")?;
            }
        }
    }
    Ok(())
}
