//! Inverse solver: the composite objective
//!
//! ```text
//! ||U_o - U'_o||_F + omega ||C - C0||_F + lambda ||E - E0||_1
//! ```
//!
//! minimized by alternating CMA-ES over superelement moduli (centers frozen)
//! and over superelement centers (moduli frozen, membership recomputed per
//! candidate).
//!
//! Moduli are searched as `log10(E)` inside `e_bounds_kpa`; the L1 term stays
//! in linear kPa. Centers are searched in units of the mean superelement
//! spacing and clamped to the mesh bounding box.

mod cmaes;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::fem::{ForwardModel, LoadCase};
use crate::mesh::TetMesh;
use crate::observation::ObservationSet;
use crate::superelement::{assign_points, center_penalty, SuperelementSet};
use crate::{Error, Point3, Result};

pub use cmaes::{cmaes_minimize, Bounds, CmaesOutcome, CmaesSettings, StopReason};

/// Objective value assigned to candidates whose forward solve fails.
pub const INFEASIBLE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    /// Weight of the center-displacement penalty.
    pub omega: f64,
    /// Weight of the L1 deviation from `e0_kpa`.
    pub lambda: f64,
    pub e0_kpa: f64,
    pub e_bounds_kpa: [f64; 2],
    /// Settings for the modulus step; `sigma0` is in decades of `E`.
    pub elasticity: CmaesSettings,
    /// Settings for the center step; `sigma0` is in units of superelement spacing.
    pub centers: CmaesSettings,
    /// When false only the modulus step runs and centers stay at `C0`.
    pub optimize_centers: bool,
    pub max_rounds: usize,
    /// Relative improvement of the total objective below which alternation stops.
    pub outer_tolerance: f64,
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            omega: 0.1,
            lambda: 0.01,
            e0_kpa: 35.8,
            e_bounds_kpa: [1.0, 1e4],
            elasticity: CmaesSettings::default(),
            centers: CmaesSettings::default(),
            optimize_centers: true,
            max_rounds: 10,
            outer_tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !finite_nonneg(self.omega) {
            return Err(Error::Config(format!("omega must be >= 0, got {}", self.omega)));
        }
        if !finite_nonneg(self.lambda) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let [lo, hi] = self.e_bounds_kpa;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid modulus bounds [{lo}, {hi}]")));
        }
        if !(self.e0_kpa > 0.0 && self.e0_kpa.is_finite()) {
            return Err(Error::Config(format!("e0 must be positive, got {}", self.e0_kpa)));
        }
        for (name, s) in [("elasticity", &self.elasticity), ("centers", &self.centers)] {
            if let Some(p) = s.population {
                if p < 4 {
                    return Err(Error::Config(format!("{name}.population must be >= 4, got {p}")));
                }
            }
            if !(s.sigma0 > 0.0) {
                return Err(Error::Config(format!("{name}.sigma0 must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// `||U_o - U'_o||_F` (mm).
    pub data_term: f64,
    /// `||C - C0||_F` (mm).
    pub center_term: f64,
    /// `sum_i |E_i - E0|` (kPa).
    pub sparsity_term: f64,
    pub total: f64,
    pub feasible: bool,
}

impl ObjectiveBreakdown {
    fn combine(data_term: f64, center_term: f64, sparsity_term: f64, cfg: &ReconstructionConfig) -> Self {
        Self {
            data_term,
            center_term,
            sparsity_term,
            total: data_term + cfg.omega * center_term + cfg.lambda * sparsity_term,
            feasible: true,
        }
    }

    fn infeasible(center_term: f64, sparsity_term: f64) -> Self {
        Self {
            data_term: INFEASIBLE,
            center_term,
            sparsity_term,
            total: INFEASIBLE,
            feasible: false,
        }
    }
}

/// RMSE and maximum absolute error between per-element fields (kPa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rmse_kpa: f64,
    pub max_error_kpa: f64,
}

fn check_lengths(estimated: &[f64], truth: &[f64]) -> Result<()> {
    if estimated.len() != truth.len() {
        return Err(Error::Validation(format!(
            "field lengths differ: {} vs {}",
            estimated.len(),
            truth.len()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::Validation("empty fields".into()));
    }
    Ok(())
}

pub fn rmse(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(estimated, truth)?;
    let sum: f64 = estimated.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sum / estimated.len() as f64).sqrt())
}

pub fn max_abs_error(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(estimated, truth)?;
    Ok(estimated.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub fn error_metrics(estimated: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    Ok(ErrorMetrics {
        rmse_kpa: rmse(estimated, truth)?,
        max_error_kpa: max_abs_error(estimated, truth)?,
    })
}

/// Everything the objective needs besides the superelement state.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    model: ForwardModel,
    centroids: Vec<Point3>,
    bbox: (Point3, Point3),
    loads: Vec<LoadCase>,
    observed: ObservationSet,
}

impl InverseProblem {
    pub fn new(
        mesh: &TetMesh,
        poisson: f64,
        fixed: &[usize],
        loads: Vec<LoadCase>,
        observed: ObservationSet,
    ) -> Result<Self> {
        Self::with_model(ForwardModel::new(mesh, poisson, fixed)?, mesh, loads, observed)
    }

    pub fn with_model(model: ForwardModel, mesh: &TetMesh, loads: Vec<LoadCase>, observed: ObservationSet) -> Result<Self> {
        observed.validate()?;
        if observed.mask.is_empty() {
            return Err(Error::Validation("no observed vertices".into()));
        }
        if loads.is_empty() {
            return Err(Error::Validation("at least one load pattern is required".into()));
        }
        if loads.len() != observed.cols() {
            return Err(Error::Validation(format!(
                "{} load patterns for {} observed columns",
                loads.len(),
                observed.cols()
            )));
        }
        if let Some(&v) = observed.mask.vertices().iter().find(|&&v| v >= mesh.vertex_count()) {
            return Err(Error::Validation(format!("observed vertex {v} out of range")));
        }
        if model.element_count() != mesh.element_count() {
            return Err(Error::Validation("forward model was built for a different mesh".into()));
        }
        Ok(Self {
            model,
            centroids: mesh.centroids(),
            bbox: mesh.bounding_box(),
            loads,
            observed,
        })
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn observed(&self) -> &ObservationSet {
        &self.observed
    }

    pub fn element_count(&self) -> usize {
        self.centroids.len()
    }

    /// `||U_o - U'_o||_F` for per-element moduli, or `None` if the solve fails.
    pub fn data_term(&self, youngs: &[f64]) -> Option<f64> {
        let factor = self.model.factorize(youngs).ok()?;
        let mask = self.observed.mask.vertices();
        let mut sum = 0.0;
        for (load, column) in self.loads.iter().zip(&self.observed.u_o) {
            let u = factor.solve(load).ok()?;
            for (k, &v) in mask.iter().enumerate() {
                for c in 0..3 {
                    sum += (u.u[v][c] - column[3 * k + c]).powi(2);
                }
            }
        }
        sum.is_finite().then(|| sum.sqrt())
    }

    fn breakdown(&self, youngs: &[f64], centers: &[Point3], se: &SuperelementSet, cfg: &ReconstructionConfig) -> ObjectiveBreakdown {
        let center_term = center_penalty(centers, &se.centers0).unwrap_or(INFEASIBLE);
        let sparsity_term: f64 = se.e_kpa.iter().map(|e| (e - cfg.e0_kpa).abs()).sum();
        match self.data_term(youngs) {
            Some(data) => ObjectiveBreakdown::combine(data, center_term, sparsity_term, cfg),
            None => ObjectiveBreakdown::infeasible(center_term, sparsity_term),
        }
    }

    /// Composite objective for `se` with its current assignment.
    pub fn objective(&self, se: &SuperelementSet, cfg: &ReconstructionConfig) -> ObjectiveBreakdown {
        if se.validate(self.element_count()).is_err() {
            let sparsity: f64 = se.e_kpa.iter().map(|e| (e - cfg.e0_kpa).abs()).sum();
            return ObjectiveBreakdown::infeasible(INFEASIBLE, sparsity);
        }
        let youngs: Vec<f64> = se.assignment.iter().map(|&s| se.e_kpa[s]).collect();
        self.breakdown(&youngs, &se.centers, se, cfg)
    }

    /// Mean superelement spacing `(V_bbox / k)^(1/3)`, capped by the largest extent.
    fn center_scale(&self, k: usize) -> f64 {
        let (lo, hi) = self.bbox;
        let extent: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
        let volume: f64 = extent.iter().product();
        let largest = extent.iter().cloned().fold(0.0, f64::max);
        (volume / k as f64).cbrt().min(largest).max(f64::MIN_POSITIVE)
    }
}

/// Result of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub superelements: SuperelementSet,
    pub objective: ObjectiveBreakdown,
    pub evaluations: usize,
    /// False when the optimizer's best candidate did not beat the input.
    pub improved: bool,
}

/// Modulus step: CMA-ES over `log10(E_se)` with centers and membership frozen.
pub fn optimize_elasticity(
    problem: &InverseProblem,
    se: &SuperelementSet,
    cfg: &ReconstructionConfig,
    seed: u64,
) -> Result<StepOutcome> {
    cfg.validate()?;
    se.validate(problem.element_count())?;
    let start = problem.objective(se, cfg);
    let [lo, hi] = cfg.e_bounds_kpa.map(f64::log10);
    let bounds = Bounds::uniform(se.len(), lo, hi);
    let x0: Vec<f64> = se.e_kpa.iter().map(|e| e.log10().clamp(lo, hi)).collect();
    let evaluate = |x: &[f64]| {
        let e_se: Vec<f64> = x.iter().map(|v| 10f64.powf(*v)).collect();
        let youngs: Vec<f64> = se.assignment.iter().map(|&s| e_se[s]).collect();
        let sparsity: f64 = e_se.iter().map(|e| (e - cfg.e0_kpa).abs()).sum();
        match problem.data_term(&youngs) {
            Some(d) => d + cfg.omega * center_penalty(&se.centers, &se.centers0).unwrap_or(0.0) + cfg.lambda * sparsity,
            None => INFEASIBLE,
        }
    };
    let out = cmaes_minimize(evaluate, &x0, Some(&bounds), &cfg.elasticity, seed)?;
    let mut candidate = se.clone();
    candidate.e_kpa = out.x.iter().map(|v| 10f64.powf(*v)).collect();
    let objective = problem.objective(&candidate, cfg);
    Ok(accept(se, start, candidate, objective, out.evaluations))
}

/// Center step: CMA-ES over all center coordinates with moduli frozen;
/// membership is recomputed for every candidate.
pub fn optimize_centers(
    problem: &InverseProblem,
    se: &SuperelementSet,
    cfg: &ReconstructionConfig,
    seed: u64,
) -> Result<StepOutcome> {
    cfg.validate()?;
    se.validate(problem.element_count())?;
    let start = problem.objective(se, cfg);
    let k = se.len();
    let scale = problem.center_scale(k);
    let (lo, hi) = problem.bbox;
    let bounds = Bounds {
        lower: (0..3 * k).map(|i| lo[i % 3] / scale).collect(),
        upper: (0..3 * k).map(|i| hi[i % 3] / scale).collect(),
    };
    let degenerate_axis = (0..3).any(|a| hi[a] <= lo[a]);
    if degenerate_axis {
        return Err(Error::Validation("mesh bounding box is flat".into()));
    }
    let x0: Vec<f64> = se
        .centers
        .iter()
        .flat_map(|c| (0..3).map(move |a| c[a].clamp(lo[a], hi[a]) / scale))
        .collect();
    let decode = |x: &[f64]| -> Vec<Point3> { x.chunks(3).map(|c| [c[0] * scale, c[1] * scale, c[2] * scale]).collect() };
    let evaluate = |x: &[f64]| {
        let centers = decode(x);
        let assignment = assign_points(&problem.centroids, &centers);
        let youngs: Vec<f64> = assignment.iter().map(|&s| se.e_kpa[s]).collect();
        let sparsity: f64 = se.e_kpa.iter().map(|e| (e - cfg.e0_kpa).abs()).sum();
        let penalty = center_penalty(&centers, &se.centers0).unwrap_or(INFEASIBLE);
        match problem.data_term(&youngs) {
            Some(d) => d + cfg.omega * penalty + cfg.lambda * sparsity,
            None => INFEASIBLE,
        }
    };
    let out = cmaes_minimize(evaluate, &x0, Some(&bounds), &cfg.centers, seed)?;
    let mut candidate = se.clone();
    candidate.centers = decode(&out.x);
    candidate.assignment = assign_points(&problem.centroids, &candidate.centers);
    let objective = problem.objective(&candidate, cfg);
    Ok(accept(se, start, candidate, objective, out.evaluations))
}

fn accept(
    input: &SuperelementSet,
    start: ObjectiveBreakdown,
    candidate: SuperelementSet,
    objective: ObjectiveBreakdown,
    evaluations: usize,
) -> StepOutcome {
    if objective.total < start.total {
        StepOutcome {
            superelements: candidate,
            objective,
            evaluations,
            improved: true,
        }
    } else {
        StepOutcome {
            superelements: input.clone(),
            objective: start,
            evaluations,
            improved: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub superelements: SuperelementSet,
    /// Per-element modulus (kPa).
    pub youngs_kpa: Vec<f64>,
    pub objective: ObjectiveBreakdown,
    /// Total objective of the initial state followed by one entry per outer round.
    pub history: Vec<f64>,
    pub rounds: usize,
    /// False when alternation stopped on the round limit.
    pub converged: bool,
    pub evaluations: usize,
    /// Superelements left without member elements.
    pub empty_superelements: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<ErrorMetrics>,
    /// Excluded from serialization so result files are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ReconstructionResult {
    pub fn with_truth(mut self, truth_kpa: &[f64]) -> Result<Self> {
        self.metrics = Some(error_metrics(&self.youngs_kpa, truth_kpa)?);
        Ok(self)
    }
}

/// SplitMix64 finalizer, used to derive independent per-step seeds.
fn mix_seed(seed: u64, round: usize, step: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(1 + 2 * round as u64 + step));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Alternates the modulus step and the center step until the relative
/// improvement of a round drops below `outer_tolerance` or `max_rounds` is
/// reached. A round that fails to improve is rejected and ends the run, so the
/// recorded history never increases.
pub fn alternate(problem: &InverseProblem, init: &SuperelementSet, cfg: &ReconstructionConfig) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut state = init.clone();
    state.assignment = assign_points(&problem.centroids, &state.centers);
    state.validate(problem.element_count())?;
    let mut best = problem.objective(&state, cfg);
    let mut history = vec![best.total];
    let mut evaluations = 0;
    let mut rounds = 0;
    let mut converged = false;
    while rounds < cfg.max_rounds {
        let step1 = optimize_elasticity(problem, &state, cfg, mix_seed(cfg.seed, rounds, 0))?;
        evaluations += step1.evaluations;
        let after = if cfg.optimize_centers {
            let step2 = optimize_centers(problem, &step1.superelements, cfg, mix_seed(cfg.seed, rounds, 1))?;
            evaluations += step2.evaluations;
            step2
        } else {
            step1
        };
        rounds += 1;
        if after.objective.total < best.total {
            let improvement = (best.total - after.objective.total) / best.total.abs().max(f64::MIN_POSITIVE);
            state = after.superelements;
            best = after.objective;
            history.push(best.total);
            if improvement < cfg.outer_tolerance {
                converged = true;
                break;
            }
        } else {
            history.push(best.total);
            converged = true;
            break;
        }
    }
    let youngs_kpa: Vec<f64> = state.assignment.iter().map(|&s| state.e_kpa[s]).collect();
    Ok(ReconstructionResult {
        empty_superelements: state.empty_superelements(),
        superelements: state,
        youngs_kpa,
        objective: best,
        history,
        rounds,
        converged,
        evaluations,
        metrics: None,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}
