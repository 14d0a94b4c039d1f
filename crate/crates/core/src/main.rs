use clap::{Parser, Subcommand};
use rfcmp::driver::{
    cmd_mesh_info, cmd_rcs, cmd_solve, cmd_spectrum, DriverError, RunConfig,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rfcmp", about = "Frequency-stable EFIE solver on closed triangulated surfaces")]
struct Cli {
    /// Flat key=value configuration file; CLI overrides win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set mesh.subdivisions=3.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Condition-number sweep over frequency or refinement.
    Spectrum,
    /// Assemble and solve scattering problems; writes currents and residuals.
    Solve,
    /// Solve and compare the bistatic RCS cut against the Mie reference.
    Rcs,
    /// Print mesh statistics.
    MeshInfo,
}

fn load_config(cli: &Cli) -> Result<RunConfig, DriverError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| DriverError::Io(e.to_string()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            DriverError::Config(format!("--set expects KEY=VALUE, got '{item}'"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), DriverError> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Spectrum => {
            let rows = cmd_spectrum(&cfg)?;
            for r in &rows {
                match r.condition {
                    Some(c) => println!(
                        "{} = {:.6e}  {:<12}  n = {:<5}  cond = {:.6e}",
                        r.x_kind, r.x, r.formulation, r.n_edges, c
                    ),
                    None => println!(
                        "{} = {:.6e}  {:<12}  n = {:<5}  {}",
                        r.x_kind, r.x, r.formulation, r.n_edges, r.status
                    ),
                }
            }
            println!("wrote {}", cfg.out_dir.join("spectrum.csv").display());
            Ok(())
        }
        Command::Solve => {
            let outcomes = cmd_solve(&cfg)?;
            let mut failed = false;
            for o in &outcomes {
                println!(
                    "f = {:.6e} Hz  {:<12}  iters = {:<4}  matvecs = {:<5}  converged = {}  wall = {:.3} s",
                    o.frequency, o.formulation, o.report.iterations, o.report.matvec_count,
                    o.converged, o.wall_time
                );
                failed |= !o.converged;
            }
            println!("wrote {}", cfg.out_dir.join("solve.csv").display());
            if failed {
                Err(DriverError::Numerical(
                    "one or more solves did not reach the requested tolerance".into(),
                ))
            } else {
                Ok(())
            }
        }
        Command::Rcs => {
            let runs = cmd_rcs(&cfg)?;
            for r in &runs {
                match r.error_pct {
                    Some(e) => println!(
                        "f = {:.6e} Hz  L2 error vs Mie = {:.3}%  -> {}",
                        r.frequency,
                        e,
                        r.csv_path.display()
                    ),
                    None => println!(
                        "f = {:.6e} Hz  Mie reference only  -> {}",
                        r.frequency,
                        r.csv_path.display()
                    ),
                }
            }
            Ok(())
        }
        Command::MeshInfo => {
            let info = cmd_mesh_info(&cfg)?;
            println!("vertices  {}", info.n_vertices);
            println!("cells     {}", info.n_cells);
            println!("edges     {}", info.n_edges);
            println!("genus     {}", info.genus);
            println!("h min/avg/max  {:.6e} / {:.6e} / {:.6e}", info.h_min, info.h_avg, info.h_max);
            println!("content hash   {}", info.content_hash);
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
