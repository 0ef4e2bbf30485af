use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elastrec::fem::MaterialField;
use elastrec::mesh::{generate_plate, load_mesh, save_mesh, PlateSpec};
use elastrec::reconstruct::ReconstructionResult;
use elastrec_cli::forward::{forward, parse_json, LoadFile};
use elastrec_cli::harness::{result_json, write_artifacts};
use elastrec_cli::{export_vtk, run_cell, run_sweep, Cell, CliError, CliResult, ExperimentConfig, Scenario};

/// Young's modulus reconstruction from partial displacement observations.
#[derive(Debug, Parser)]
#[command(name = "elastrec", version)]
struct Cli {
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        action: MeshCommand,
    },
    /// Solve the forward problem for a mesh, material and load file.
    Forward {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        material: PathBuf,
        #[arg(long)]
        loads: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the base cell of an experiment config for one seed.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every cell of an experiment config and write report.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export a reconstruction result as a VTK legacy file.
    ExportVtk {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum MeshCommand {
    /// Generate a rectangular plate of cubic cells split into tetrahedra.
    Gen {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        nz: usize,
        #[arg(long, default_value_t = 10.0)]
        cell_size: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_config(cli: &Cli, path: &Path) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Mesh {
            action: MeshCommand::Gen { nx, ny, nz, cell_size, out },
        } => {
            let mesh = generate_plate(&PlateSpec::new(*nx, *ny, *nz, *cell_size))?;
            save_mesh(&mesh, out)?;
            println!("{} vertices, {} tetrahedra -> {}", mesh.vertex_count(), mesh.element_count(), out.display());
        }
        Command::Forward { mesh, material, loads, out } => {
            let mesh = load_mesh(mesh)?;
            let material: MaterialField = parse_json(&read(material)?, "material")?;
            let loads: LoadFile = parse_json(&read(loads)?, "loads")?;
            let result = forward(&mesh, &material, &loads)?;
            write(out, &serde_json::to_string(&result).expect("output serializes"))?;
            println!("{} patterns -> {}", result.patterns.len(), out.display());
        }
        Command::Reconstruct { config } => {
            let cfg = load_config(cli, config)?;
            let scenario = Scenario::build(&cfg)?;
            let cell = Cell {
                observed: if cfg.observation.all { scenario.scan.len() } else { cfg.observation.count },
                patterns: cfg.patterns.len(),
                lambda: cfg.reconstruction.lambda,
                seed: cfg.seeds[0],
            };
            let result = run_cell(&cfg, &scenario, &cell)?;
            let json = cfg.output_dir.join(format!("{}.json", cell.stem()));
            write(&json, &result_json(&result))?;
            export_vtk(&result, &scenario.mesh, Some(&scenario.truth_kpa), &json.with_extension("vtk"))?;
            let m = result.metrics.expect("metrics attached");
            println!(
                "rmse {:.4} kPa, max error {:.4} kPa, objective {:.6e}, {} evaluations, {} rounds, {:.1} s -> {}",
                m.rmse_kpa,
                m.max_error_kpa,
                result.objective.total,
                result.evaluations,
                result.rounds,
                result.wall_time_s,
                json.display()
            );
        }
        Command::Sweep { config } => {
            let cfg = load_config(cli, config)?;
            let outcome = run_sweep(&cfg)?;
            let csv = write_artifacts(&cfg, &outcome)?;
            let failed = outcome.report.rows.iter().filter(|r| !r.is_ok()).count();
            for row in &outcome.report.rows {
                match row.rmse_kpa {
                    Some(r) => println!(
                        "observed {:>3}  patterns {}  lambda {:<8}  seed {:<3} rmse {:>10.4} kPa",
                        row.observed, row.patterns, row.lambda, row.seed, r
                    ),
                    None => println!(
                        "observed {:>3}  patterns {}  lambda {:<8}  seed {:<3} {}",
                        row.observed, row.patterns, row.lambda, row.seed, row.status
                    ),
                }
            }
            println!("{} rows ({failed} failed) -> {}", outcome.report.rows.len(), csv.display());
        }
        Command::ExportVtk { result, mesh, out } => {
            let mesh = load_mesh(mesh)?;
            let result: ReconstructionResult = parse_json(&read(result)?, "result")?;
            export_vtk(&result, &mesh, None, out)?;
            println!("{} cells -> {}", mesh.element_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("elastrec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
