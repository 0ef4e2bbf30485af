//! File formats for the standalone forward solve.

use elastrec::fem::{assemble, solve_patterns, LoadCase, MaterialField};
use elastrec::mesh::TetMesh;
use elastrec::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Fixed vertices plus sparse nodal loads (N) per pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadFile {
    pub fixed: Vec<usize>,
    pub patterns: Vec<NodalPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodalPattern {
    pub id: String,
    pub forces: Vec<NodalForce>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodalForce {
    pub vertex: usize,
    pub force: Point3,
}

/// Displacements (mm) for every vertex, one list per pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub patterns: Vec<String>,
    pub displacements: Vec<Vec<Point3>>,
}

impl LoadFile {
    pub fn load_cases(&self, vertex_count: usize) -> CliResult<Vec<LoadCase>> {
        self.patterns
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut load = LoadCase::zeros(p.id.clone(), vertex_count);
                for (k, f) in p.forces.iter().enumerate() {
                    let slot = load.forces.get_mut(f.vertex).ok_or_else(|| {
                        CliError::Config(format!("patterns[{i}].forces[{k}].vertex: {} out of range", f.vertex))
                    })?;
                    for a in 0..3 {
                        slot[a] += f.force[a];
                    }
                }
                Ok(load)
            })
            .collect()
    }
}

pub fn forward(mesh: &TetMesh, material: &MaterialField, loads: &LoadFile) -> CliResult<ForwardOutput> {
    let cases = loads.load_cases(mesh.vertex_count())?;
    let system = assemble(mesh, material, &loads.fixed)?;
    let fields = solve_patterns(&system, &cases)?;
    Ok(ForwardOutput {
        patterns: cases.into_iter().map(|c| c.id).collect(),
        displacements: fields.into_iter().map(|f| f.u).collect(),
    })
}

/// Parses JSON, reporting the failing field path.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{what}: {path}: {}", e.into_inner()))
    })
}
