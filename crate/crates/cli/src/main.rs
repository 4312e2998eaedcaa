use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmclab_core::{run_experiment_with, validate_config, Error, ExperimentConfig, ExperimentKind, RunOptions};

/// Emulated quantum-assisted GFMC experiments on the transverse-field Ising chain.
#[derive(Parser)]
#[command(name = "qmclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sector ED against the free-fermion ground energy.
    ExactCheck(RunArgs),
    /// Variational energy of the trial wavefunction.
    Variational(RunArgs),
    /// Exact and sampled overlaps of rank-ordered basis states.
    Overlaps(RunArgs),
    /// Exact and sampled local energies of rank-ordered basis states.
    LocalEnergy(RunArgs),
    /// GFMC energy error against the measurement budget.
    GfmcSweep(RunArgs),
    /// Product-state and spin-flip walker overlaps and local energies.
    WalkerStudy(RunArgs),
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "QMCLAB_THREADS")]
    threads: Option<usize>,
    /// Overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    validate_config(path).map_err(|e| Failure::Config(e.to_string()))
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Failure> {
    let mut config = load(&args.config)?;
    if config.experiment != kind {
        return Err(Failure::Config(format!(
            "config describes a `{}` experiment, not `{}`",
            config.experiment.as_str(),
            kind.as_str()
        )));
    }
    if args.threads == Some(0) {
        return Err(Failure::Config("--threads must be >= 1".into()));
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let options = RunOptions { threads: args.threads };
    let manifest = run_experiment_with(&config, options).map_err(|e| match e {
        Error::Config { .. } => Failure::Config(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    })?;
    eprintln!(
        "{}: {}/{} cells ok, output in {}",
        kind.as_str(),
        manifest.total_cells - manifest.failed_cells,
        manifest.total_cells,
        config.output_dir.display()
    );
    if manifest.all_failed() {
        return Err(Failure::Runtime("every cell failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ExactCheck(a) => run(ExperimentKind::ExactCheck, a),
        Command::Variational(a) => run(ExperimentKind::Variational, a),
        Command::Overlaps(a) => run(ExperimentKind::Overlaps, a),
        Command::LocalEnergy(a) => run(ExperimentKind::LocalEnergy, a),
        Command::GfmcSweep(a) => run(ExperimentKind::GfmcSweep, a),
        Command::WalkerStudy(a) => run(ExperimentKind::WalkerStudy, a),
        Command::Validate { config } => load(&config).and_then(|c| {
            let json = serde_json::to_string_pretty(&c.resolved())
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{json}");
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
