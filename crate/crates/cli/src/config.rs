//! Experiment configuration files and the vertex selectors they contain.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use elastrec::fem::LoadCase;
use elastrec::mesh::{generate_plate, grid_region_map, region_label, Face, PlateSpec, TetMesh};
use elastrec::observation::ObservationMask;
use elastrec::reconstruct::ReconstructionConfig;
use elastrec::superelement::CenterLayout;
use elastrec::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub plate: PlateSpec,
    pub ground_truth: GroundTruth,
    #[serde(default = "default_poisson")]
    pub poisson: f64,
    #[serde(default)]
    pub fixed: FixedSelector,
    pub patterns: Vec<PatternSpec>,
    #[serde(default)]
    pub observation: ObservationSpec,
    /// Standard deviation (mm) of Gaussian noise added to synthetic observations.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub superelements: SuperelementSpec,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Write per-cell result JSON and VTK files.
    #[serde(default = "default_true")]
    pub write_artifacts: bool,
}

fn default_poisson() -> f64 {
    0.4
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

/// Region-wise ground truth: a `regions` grid over the plate with a
/// background modulus and block overrides applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub regions: [usize; 3],
    pub background_kpa: f64,
    #[serde(default)]
    pub blocks: Vec<RegionBlock>,
}

/// Regions `min[a] <= r[a] < max[a]` set to `kpa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBlock {
    pub min: [usize; 3],
    pub max: [usize; 3],
    pub kpa: f64,
}

impl GroundTruth {
    pub fn table(&self) -> BTreeMap<u32, f64> {
        let [gx, gy, gz] = self.regions;
        let mut table = BTreeMap::new();
        for iz in 0..gz {
            for iy in 0..gy {
                for ix in 0..gx {
                    let r = [ix, iy, iz];
                    let kpa = self
                        .blocks
                        .iter()
                        .rev()
                        .find(|b| (0..3).all(|a| b.min[a] <= r[a] && r[a] < b.max[a]))
                        .map_or(self.background_kpa, |b| b.kpa);
                    table.insert(region_label(gx, gy, ix, iy, iz), kpa);
                }
            }
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSelector {
    pub face: Face,
    /// Explicit vertex list; overrides `face` when present.
    #[serde(default)]
    pub vertices: Option<Vec<usize>>,
}

impl Default for FixedSelector {
    fn default() -> Self {
        Self {
            face: Face::XMin,
            vertices: None,
        }
    }
}

/// One deformation pattern: a total force spread equally over the `count`
/// vertices of `face` nearest to `near`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub id: String,
    #[serde(default = "default_contact_face")]
    pub face: Face,
    pub near: Point3,
    #[serde(default = "default_contact_count")]
    pub count: usize,
    /// Total force (N).
    pub force_n: Point3,
}

fn default_contact_face() -> Face {
    Face::ZMin
}

fn default_contact_count() -> usize {
    3
}

/// Corner of the scanned face where the observation order starts. The
/// order is by x from that corner, then by y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStart {
    MaxXMinY,
    MaxXMaxY,
    MinXMinY,
    MinXMaxY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationSpec {
    /// Observe every mesh vertex; `count` and `start` are ignored.
    pub all: bool,
    pub count: usize,
    pub face: Face,
    pub start: ScanStart,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        Self {
            all: false,
            count: 15,
            face: Face::ZMax,
            start: ScanStart::MaxXMinY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperelementSpec {
    pub layout: CenterLayout,
    /// Initial modulus of every superelement (kPa).
    pub e_init_kpa: f64,
}

impl Default for SuperelementSpec {
    fn default() -> Self {
        Self {
            layout: CenterLayout::Grid([6, 6, 1]),
            e_init_kpa: 35.8,
        }
    }
}

/// Empty axes fall back to the base configuration value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub observed_counts: Vec<usize>,
    pub pattern_counts: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config(format!("{path}: {inner}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without meshing.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        self.plate.validate().map_err(|e| CliError::Config(format!("plate: {e}")))?;
        let (cells, regions) = ([self.plate.nx, self.plate.ny, self.plate.nz], self.ground_truth.regions);
        for a in 0..3 {
            if regions[a] == 0 || cells[a] % regions[a] != 0 {
                return bad("ground_truth.regions", format!("{regions:?} must divide the cell grid {cells:?}"));
            }
        }
        if !(self.ground_truth.background_kpa > 0.0) {
            return bad("ground_truth.background_kpa", "must be positive".into());
        }
        for (i, b) in self.ground_truth.blocks.iter().enumerate() {
            if !(b.kpa > 0.0) {
                return bad(&format!("ground_truth.blocks[{i}].kpa"), "must be positive".into());
            }
            if (0..3).any(|a| b.min[a] >= b.max[a] || b.max[a] > regions[a]) {
                return bad(&format!("ground_truth.blocks[{i}]"), format!("empty or outside the {regions:?} region grid"));
            }
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return bad("poisson", format!("must lie in [0, 0.5), got {}", self.poisson));
        }
        if self.patterns.is_empty() {
            return bad("patterns", "at least one pattern is required".into());
        }
        for (i, p) in self.patterns.iter().enumerate() {
            if p.count == 0 {
                return bad(&format!("patterns[{i}].count"), "must be >= 1".into());
            }
            if p.force_n.iter().any(|f| !f.is_finite()) {
                return bad(&format!("patterns[{i}].force_n"), "must be finite".into());
            }
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std", "must be >= 0".into());
        }
        if !(self.superelements.e_init_kpa > 0.0) {
            return bad("superelements.e_init_kpa", "must be positive".into());
        }
        self.reconstruction
            .validate()
            .map_err(|e| CliError::Config(format!("reconstruction: {e}")))?;
        for (i, &p) in self.sweep.pattern_counts.iter().enumerate() {
            if p == 0 || p > self.patterns.len() {
                return bad(
                    &format!("sweep.pattern_counts[{i}]"),
                    format!("{p} outside 1..={}", self.patterns.len()),
                );
            }
        }
        for (i, &l) in self.sweep.lambdas.iter().enumerate() {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(&format!("sweep.lambdas[{i}]"), format!("must be >= 0, got {l}"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.workers == Some(0) {
            return bad("workers", "must be >= 1".into());
        }
        Ok(())
    }
}

/// Mesh, ground truth and vertex sets resolved from a configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: TetMesh,
    pub truth_kpa: Vec<f64>,
    pub fixed: Vec<usize>,
    pub loads: Vec<LoadCase>,
    /// Observation scan order; masks take a prefix of it.
    pub scan: Vec<usize>,
}

impl Scenario {
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        let mesh = generate_plate(&cfg.plate)?;
        let regions = grid_region_map(&mesh, &cfg.plate, cfg.ground_truth.regions, cfg.ground_truth.table())?;
        let fixed = match &cfg.fixed.vertices {
            Some(list) => {
                if let Some(v) = list.iter().find(|&&v| v >= mesh.vertex_count()) {
                    return Err(CliError::Config(format!("fixed.vertices: vertex {v} out of range")));
                }
                let mut list = list.clone();
                list.sort_unstable();
                list.dedup();
                list
            }
            None => mesh.vertices_on_face(cfg.fixed.face),
        };
        if fixed.is_empty() {
            return Err(CliError::Config("fixed: selects no vertices".into()));
        }
        let mut loads = Vec::with_capacity(cfg.patterns.len());
        for (i, p) in cfg.patterns.iter().enumerate() {
            let contacts = nearest_on_face(&mesh, p.face, p.near, p.count);
            if contacts.len() < p.count {
                return Err(CliError::Config(format!(
                    "patterns[{i}].count: face has only {} vertices",
                    contacts.len()
                )));
            }
            if let Some(v) = contacts.iter().find(|v| fixed.binary_search(v).is_ok()) {
                return Err(CliError::Config(format!("patterns[{i}]: contact vertex {v} is fixed")));
            }
            loads.push(LoadCase::distributed(p.id.clone(), mesh.vertex_count(), &contacts, p.force_n));
        }
        let scan = if cfg.observation.all {
            (0..mesh.vertex_count()).collect()
        } else {
            scan_order(&mesh, cfg.observation.face, cfg.observation.start)
        };
        Ok(Self {
            truth_kpa: regions.moduli(),
            mesh,
            fixed,
            loads,
            scan,
        })
    }

    pub fn mask(&self, count: usize) -> CliResult<ObservationMask> {
        if count > self.scan.len() {
            return Err(CliError::Config(format!(
                "observation count {count} exceeds the {} candidate vertices",
                self.scan.len()
            )));
        }
        Ok(ObservationMask::new(self.scan[..count].to_vec(), self.mesh.vertex_count())?)
    }
}

/// The `count` vertices of `face` closest to `point`; ties go to the lower index.
pub fn nearest_on_face(mesh: &TetMesh, face: Face, point: Point3, count: usize) -> Vec<usize> {
    let d2 = |v: usize| -> f64 {
        let p = mesh.vertices()[v];
        (0..3).map(|a| (p[a] - point[a]).powi(2)).sum()
    };
    let mut candidates = mesh.vertices_on_face(face);
    candidates.sort_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)));
    candidates.truncate(count);
    candidates
}

/// Vertices of `face` ordered by x from the `start` corner, then by y.
pub fn scan_order(mesh: &TetMesh, face: Face, start: ScanStart) -> Vec<usize> {
    let (sx, sy) = match start {
        ScanStart::MaxXMinY => (-1.0, 1.0),
        ScanStart::MaxXMaxY => (-1.0, -1.0),
        ScanStart::MinXMinY => (1.0, 1.0),
        ScanStart::MinXMaxY => (1.0, -1.0),
    };
    let mut vertices = mesh.vertices_on_face(face);
    let key = |v: usize| {
        let p = mesh.vertices()[v];
        (sx * p[0], sy * p[1])
    };
    vertices.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    vertices
}
