//! Observed vertex subsets and the observed displacement matrix `U_o`.
//!
//! `U_o` has one column per deformation pattern and `3 * n_o` rows: the x, y, z
//! displacement of each observed vertex in mask order.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fem::{DisplacementField, ForwardModel, LoadCase, MaterialField};
use crate::mesh::TetMesh;
use crate::{Error, Result};

/// Ordered, duplicate-free list of observed vertices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationMask(Vec<usize>);

impl ObservationMask {
    pub fn new(vertices: Vec<usize>, vertex_count: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(vertices.len());
        for &v in &vertices {
            if v >= vertex_count {
                return Err(Error::Validation(format!(
                    "observed vertex {v} out of range for {vertex_count} vertices"
                )));
            }
            if !seen.insert(v) {
                return Err(Error::Validation(format!("observed vertex {v} listed twice")));
            }
        }
        Ok(Self(vertices))
    }

    pub fn all(vertex_count: usize) -> Self {
        Self((0..vertex_count).collect())
    }

    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSet {
    pub mask: ObservationMask,
    pub patterns: Vec<String>,
    /// Column-major: `u_o[p]` is the stacked observed displacement for pattern `p`.
    pub u_o: Vec<Vec<f64>>,
}

impl ObservationSet {
    pub fn rows(&self) -> usize {
        3 * self.mask.len()
    }

    pub fn cols(&self) -> usize {
        self.u_o.len()
    }

    pub fn get(&self, row: usize, pattern: usize) -> f64 {
        self.u_o[pattern][row]
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns.len() != self.u_o.len() {
            return Err(Error::Validation(format!(
                "{} pattern ids for {} columns",
                self.patterns.len(),
                self.u_o.len()
            )));
        }
        for (p, col) in self.u_o.iter().enumerate() {
            if col.len() != self.rows() {
                return Err(Error::Validation(format!(
                    "column {p} has {} rows, expected {}",
                    col.len(),
                    self.rows()
                )));
            }
            if col.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("column {p} has a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(Error::from_json)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text).map_err(Error::from_json)?;
        set.validate()?;
        Ok(set)
    }
}

/// Extracts the rows of `U_o` for `mask` from full displacement fields.
pub fn observe(fields: &[DisplacementField], pattern_ids: &[String], mask: &ObservationMask) -> Result<ObservationSet> {
    if fields.len() != pattern_ids.len() {
        return Err(Error::Validation(format!(
            "{} fields for {} pattern ids",
            fields.len(),
            pattern_ids.len()
        )));
    }
    let u_o = fields
        .iter()
        .map(|field| {
            mask.vertices()
                .iter()
                .map(|&v| {
                    field.u.get(v).copied().ok_or_else(|| {
                        Error::Validation(format!(
                            "observed vertex {v} out of range for {} vertices",
                            field.u.len()
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(|d| d.into_iter().flatten().collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(ObservationSet {
        mask: mask.clone(),
        patterns: pattern_ids.to_vec(),
        u_o,
    })
}

/// Forward observations of a ground-truth field, plus optional seeded i.i.d.
/// Gaussian noise (`noise_std` in mm) on every component.
pub fn synthesize_with_model(
    model: &ForwardModel,
    truth_kpa: &[f64],
    loads: &[LoadCase],
    mask: &ObservationMask,
    noise_std: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("noise std must be >= 0, got {noise_std}")));
    }
    let fields = model.solve_patterns(truth_kpa, loads)?;
    let ids: Vec<String> = loads.iter().map(|l| l.id.clone()).collect();
    let mut set = observe(&fields, &ids, mask)?;
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for x in set.u_o.iter_mut().flatten() {
            *x += normal.sample(&mut rng);
        }
    }
    Ok(set)
}

pub fn synthesize_observations(
    mesh: &TetMesh,
    truth: &MaterialField,
    fixed: &[usize],
    loads: &[LoadCase],
    mask: &ObservationMask,
    noise_std: f64,
    seed: u64,
) -> Result<ObservationSet> {
    truth.validate()?;
    let model = ForwardModel::new(mesh, truth.poisson, fixed)?;
    synthesize_with_model(&model, &truth.youngs_kpa, loads, mask, noise_std, seed)
}

/// Unsquared Frobenius norm `||U_o - U'_o||_F` (mm).
pub fn residual(observed: &ObservationSet, predicted: &ObservationSet) -> Result<f64> {
    if observed.mask != predicted.mask {
        return Err(Error::Validation("observation masks differ".into()));
    }
    if observed.cols() != predicted.cols() {
        return Err(Error::Validation(format!(
            "pattern counts differ: {} vs {}",
            observed.cols(),
            predicted.cols()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in observed.u_o.iter().zip(&predicted.u_o) {
        if a.len() != b.len() {
            return Err(Error::Validation(format!("column lengths differ: {} vs {}", a.len(), b.len())));
        }
        sum += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(sum.sqrt())
}
