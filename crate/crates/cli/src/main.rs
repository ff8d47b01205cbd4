//! Command-line front end for the MTI-FP solver and its experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtifp::harness::{run_command, Command, ExperimentConfig, Format};
use mtifp::SolverError;

#[derive(Parser, Debug)]
#[command(
    name = "mtifp",
    version,
    about = "Uniformly accurate nonlinear Klein-Gordon solver and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one simulation per eps and write the final state.
    Solve(Common),
    /// Spatial error table at a fixed small time step.
    TableSpatial(Common),
    /// Temporal error table with the uniform-error row.
    TableTemporal(Common),
    /// Multiscale interpolation error at x = 0.
    InterpError(Common),
    /// Distances to the NLSW and NLSE limit models.
    Limits(Common),
    /// Two-dimensional snapshots.
    Dynamics2d(Common),
    /// Per-mode coefficient table.
    CoeffDump(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file merged over the command defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated eps values.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Comma-separated time steps.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    /// Comma-separated mesh sizes.
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Output directory (nothing is written without it).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Option<Vec<OutFormat>>,
    /// Worker threads: 0 for all cores, 1 for sequential.
    #[arg(long)]
    jobs: Option<usize>,
    /// Reference time step.
    #[arg(long)]
    ref_tau: Option<f64>,
    /// Reference cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Cmd {
    fn split(self) -> (Command, Common) {
        match self {
            Cmd::Solve(c) => (Command::Solve, c),
            Cmd::TableSpatial(c) => (Command::TableSpatial, c),
            Cmd::TableTemporal(c) => (Command::TableTemporal, c),
            Cmd::InterpError(c) => (Command::InterpError, c),
            Cmd::Limits(c) => (Command::Limits, c),
            Cmd::Dynamics2d(c) => (Command::Dynamics2d, c),
            Cmd::CoeffDump(c) => (Command::CoeffDump, c),
        }
    }
}

fn build_config(cmd: Command, c: Common) -> Result<ExperimentConfig, SolverError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(cmd, p)?,
        None => ExperimentConfig::defaults(cmd),
    };
    if let Some(v) = c.eps {
        cfg.sweep.eps = v;
    }
    if let Some(v) = c.tau {
        cfg.sweep.tau = v;
    }
    if let Some(v) = c.h {
        cfg.sweep.h = v;
    }
    if let Some(v) = c.t_end {
        cfg.sweep.t_end = v;
    }
    if let Some(v) = c.ref_tau {
        cfg.reference.tau = v;
    }
    if let Some(v) = c.cache {
        cfg.reference.cache_dir = Some(v);
    }
    if let Some(v) = c.out {
        cfg.output.dir = Some(v);
    }
    if let Some(v) = c.format {
        cfg.output.formats = v
            .into_iter()
            .map(|f| match f {
                OutFormat::Csv => Format::Csv,
                OutFormat::Json => Format::Json,
            })
            .collect();
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    Ok(cfg)
}

fn execute(cmd: Command, common: Common) -> Result<serde_json::Value, SolverError> {
    let cfg = build_config(cmd, common)?;
    let out = run_command(cmd, &cfg)?;
    eprint!("{}", out.text);
    let mut summary = out.summary.clone();
    if let Some(dir) = &cfg.output.dir {
        let written = out.write_to(dir)?;
        summary["files"] = written.iter().map(|p| p.display().to_string()).collect();
    }
    Ok(summary)
}

fn main() -> ExitCode {
    let (cmd, common) = Cli::parse().command.split();
    match execute(cmd, common) {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut report = e.report();
            report["command"] = cmd.name().into();
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
