//! Sweep execution: every (observed count, pattern count, lambda, seed) cell
//! synthesizes its own observations and runs an independent reconstruction.

use std::fs;
use std::path::{Path, PathBuf};

use elastrec::fem::ForwardModel;
use elastrec::mesh::{write_vtk, TetMesh};
use elastrec::observation::{synthesize_with_model, ObservationMask};
use elastrec::reconstruct::{alternate, InverseProblem, ReconstructionResult};
use elastrec::superelement::SuperelementSet;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Scenario};
use crate::error::{CliError, CliResult};
use crate::report::{report_csv, ReportRow, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub observed: usize,
    pub patterns: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Cell {
    /// File stem for this cell's artifacts.
    pub fn stem(&self) -> String {
        format!("obs{:03}_pat{}_lam{}_seed{}", self.observed, self.patterns, self.lambda, self.seed)
    }
}

/// All cells of the sweep, sorted by (observed, patterns, lambda, seed).
pub fn cells(cfg: &ExperimentConfig, scenario: &Scenario) -> Vec<Cell> {
    let observed = if cfg.observation.all {
        vec![scenario.scan.len()]
    } else if cfg.sweep.observed_counts.is_empty() {
        vec![cfg.observation.count]
    } else {
        cfg.sweep.observed_counts.clone()
    };
    let patterns = if cfg.sweep.pattern_counts.is_empty() {
        vec![cfg.patterns.len()]
    } else {
        cfg.sweep.pattern_counts.clone()
    };
    let lambdas = if cfg.sweep.lambdas.is_empty() {
        vec![cfg.reconstruction.lambda]
    } else {
        cfg.sweep.lambdas.clone()
    };
    let mut out = Vec::new();
    for &o in &observed {
        for &p in &patterns {
            for &l in &lambdas {
                for &s in &cfg.seeds {
                    out.push(Cell {
                        observed: o,
                        patterns: p,
                        lambda: l,
                        seed: s,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        (a.observed, a.patterns)
            .cmp(&(b.observed, b.patterns))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.seed.cmp(&b.seed))
    });
    out.dedup();
    out
}

/// Runs one cell in isolation and attaches error metrics against the ground truth.
pub fn run_cell(cfg: &ExperimentConfig, scenario: &Scenario, cell: &Cell) -> CliResult<ReconstructionResult> {
    if cell.patterns == 0 || cell.patterns > scenario.loads.len() {
        return Err(CliError::Config(format!(
            "pattern count {} outside 1..={}",
            cell.patterns,
            scenario.loads.len()
        )));
    }
    let mask = if cfg.observation.all {
        ObservationMask::all(scenario.mesh.vertex_count())
    } else {
        scenario.mask(cell.observed)?
    };
    let loads = scenario.loads[..cell.patterns].to_vec();
    let model = ForwardModel::new(&scenario.mesh, cfg.poisson, &scenario.fixed)?;
    let observed = synthesize_with_model(&model, &scenario.truth_kpa, &loads, &mask, cfg.noise_std, cell.seed)?;
    let problem = InverseProblem::with_model(model, &scenario.mesh, loads, observed)?;
    let centers = cfg.superelements.layout.centers(&scenario.mesh)?;
    let init = SuperelementSet::from_centers(&scenario.mesh, centers, cfg.superelements.e_init_kpa)?;
    let mut rc = cfg.reconstruction.clone();
    rc.lambda = cell.lambda;
    rc.seed = cell.seed;
    let result = alternate(&problem, &init, &rc)?;
    Ok(result.with_truth(&scenario.truth_kpa)?)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub scenario: Scenario,
    pub cells: Vec<Cell>,
    pub results: Vec<Result<ReconstructionResult, String>>,
    pub report: SweepReport,
}

fn row(cell: &Cell, result: &Result<ReconstructionResult, String>) -> ReportRow {
    let base = ReportRow {
        seed: cell.seed,
        observed: cell.observed,
        patterns: cell.patterns,
        lambda: cell.lambda,
        rmse_kpa: None,
        max_error_kpa: None,
        evaluations: 0,
        wall_time_s: 0.0,
        status: String::new(),
    };
    match result {
        Ok(r) => {
            let m = r.metrics.expect("metrics attached by run_cell");
            ReportRow {
                rmse_kpa: Some(m.rmse_kpa),
                max_error_kpa: Some(m.max_error_kpa),
                evaluations: r.evaluations,
                wall_time_s: r.wall_time_s,
                status: "ok".into(),
                ..base
            }
        }
        Err(e) => ReportRow {
            status: format!("failed: {e}"),
            ..base
        },
    }
}

/// Runs every cell on a pool of `cfg.workers` threads (all cores when unset).
/// Cell failures are recorded in the report rather than aborting the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> CliResult<SweepOutcome> {
    cfg.validate()?;
    let scenario = Scenario::build(cfg)?;
    let cells = cells(cfg, &scenario);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("workers: {e}")))?;
    let results: Vec<Result<ReconstructionResult, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(cfg, &scenario, c).map_err(|e| e.to_string()))
            .collect()
    });
    let report = SweepReport {
        rows: cells.iter().zip(&results).map(|(c, r)| row(c, r)).collect(),
    };
    Ok(SweepOutcome {
        scenario,
        cells,
        results,
        report,
    })
}

pub fn result_json(result: &ReconstructionResult) -> String {
    serde_json::to_string_pretty(result).expect("result serializes")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Writes the per-element modulus of `result` (and, if given, the ground
/// truth) as a VTK legacy file.
pub fn export_vtk(result: &ReconstructionResult, mesh: &TetMesh, truth: Option<&[f64]>, path: &Path) -> CliResult<()> {
    if path.as_os_str().is_empty() {
        return Err(CliError::Io("empty output path".into()));
    }
    if result.youngs_kpa.len() != mesh.element_count() {
        return Err(CliError::Config(format!(
            "result has {} element moduli for a mesh of {} elements",
            result.youngs_kpa.len(),
            mesh.element_count()
        )));
    }
    let membership: Vec<f64> = result.superelements.assignment.iter().map(|&s| s as f64).collect();
    let mut fields: Vec<(&str, &[f64])> = vec![("youngs_modulus_kpa", &result.youngs_kpa)];
    if membership.len() == mesh.element_count() {
        fields.push(("superelement", &membership));
    }
    if let Some(t) = truth {
        fields.push(("ground_truth_kpa", t));
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_vtk(mesh, &fields, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Writes `report.csv`, `config.json` and per-cell artifacts under `cfg.output_dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, outcome: &SweepOutcome) -> CliResult<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write_file(&dir.join("config.json"), &cfg.to_json())?;
    if cfg.write_artifacts {
        let cells_dir = dir.join("cells");
        fs::create_dir_all(&cells_dir).map_err(|e| io_err(&cells_dir, e))?;
        for (cell, result) in outcome.cells.iter().zip(&outcome.results) {
            if let Ok(r) = result {
                write_file(&cells_dir.join(format!("{}.json", cell.stem())), &result_json(r))?;
                export_vtk(
                    r,
                    &outcome.scenario.mesh,
                    Some(&outcome.scenario.truth_kpa),
                    &cells_dir.join(format!("{}.vtk", cell.stem())),
                )?;
            }
        }
    }
    let csv = dir.join("report.csv");
    report_csv(&outcome.report, &csv)?;
    Ok(csv)
}

/// Loads a configuration, runs its sweep and writes all artifacts.
pub fn run_experiment(config_path: impl AsRef<Path>) -> CliResult<SweepReport> {
    let cfg = ExperimentConfig::load(config_path)?;
    let outcome = run_sweep(&cfg)?;
    write_artifacts(&cfg, &outcome)?;
    Ok(outcome.report)
}
