//! Batch command-line front end: synthesize validation datasets, run
//! extractions, solve fixed layouts, retrieve phase and compare datasets.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "emdex", version, about = "Equivalent-dipole extraction from magnitude-only near-field scans")]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize dataset CSVs from a scene JSON.
    Synth {
        /// Scene JSON (sources, environment, noise, surfaces).
        #[arg(long)]
        config: PathBuf,
        /// Directory for the per-surface CSVs.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the scene's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract equivalent dipoles from magnitude-only dataset(s).
    Extract {
        /// Extraction run config JSON (datasets, bounds, GA, solver, μ).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the GA seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the dipole-count cap.
        #[arg(long)]
        max_dipoles: Option<usize>,
        /// Use only the first dataset (single-surface iteration).
        #[arg(long)]
        single_surface: bool,
        /// Dataset magnitudes are in dBµV/m; convert on read.
        #[arg(long)]
        db_uv_m: bool,
    },
    /// Run the back-and-forth iteration for a fixed dipole layout.
    Solve {
        /// Dipole-list JSON naming the kinds and positions.
        #[arg(long)]
        layout: PathBuf,
        /// One or two dataset CSVs.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Solver config JSON (epsilon, max_iterations, rcond).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Force the single-surface path (first dataset only).
        #[arg(long)]
        single_surface: bool,
        #[arg(long)]
        db_uv_m: bool,
        /// PEC ground plane at z = 0.
        #[arg(long)]
        ground: bool,
    },
    /// Retrieve field phase from an extracted dipole model.
    Phase {
        /// Dipole-list JSON of the source model.
        #[arg(long)]
        dipoles: PathBuf,
        /// Surface spec JSON to evaluate on (unless --truth provides a grid).
        #[arg(long)]
        surface: Option<PathBuf>,
        /// Ground-truth dataset with phases; enables the alignment report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Frequency in Hz (required with --surface; taken from --truth otherwise).
        #[arg(long)]
        frequency_hz: Option<f64>,
        /// Model a PEC ground plane at z = 0.
        #[arg(long)]
        ground: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Relative error between datasets on a shared grid.
    Compare {
        /// Two (reference, test) or four (ref1, test1, ref2, test2) CSVs.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Where to write per-point error CSVs (omitted: no files).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        db_uv_m: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(cli.log_level.to_string()),
    )
    .format_timestamp(None)
    .init();

    let result = match cli.command {
        Command::Synth {
            config,
            out_dir,
            seed,
        } => commands::synth(&config, &out_dir, seed),
        Command::Extract {
            config,
            out_dir,
            seed,
            max_dipoles,
            single_surface,
            db_uv_m,
        } => commands::extract(&config, &out_dir, seed, max_dipoles, single_surface, db_uv_m),
        Command::Solve {
            layout,
            datasets,
            config,
            out_dir,
            single_surface,
            db_uv_m,
            ground,
        } => commands::solve(
            &layout,
            &datasets,
            config.as_deref(),
            &out_dir,
            single_surface,
            db_uv_m,
            ground,
        ),
        Command::Phase {
            dipoles,
            surface,
            truth,
            frequency_hz,
            ground,
            out_dir,
        } => commands::phase(
            &dipoles,
            surface.as_deref(),
            truth.as_deref(),
            frequency_hz,
            ground,
            &out_dir,
        ),
        Command::Compare {
            datasets,
            out_dir,
            db_uv_m,
        } => commands::compare(&datasets, out_dir.as_deref(), db_uv_m),
    };

    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
