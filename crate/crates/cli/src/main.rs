use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tdid_cli::{run_design, run_validate, Overrides, EXIT_OK};

#[derive(Parser)]
#[command(name = "tdid", version, about = "Time-domain input design for system identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Artifact directory (default: `output_dir` of the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the initial basis (design) or the Monte Carlo noise (validate).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Design a minimum-length experiment.
    Design { config: PathBuf },
    /// Identify the model repeatedly with a designed input.
    Validate { config: PathBuf, design: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let o = Overrides { out: cli.out, seed: cli.seed, runs: cli.runs };
    let code = match &cli.command {
        Command::Design { config } => run_design(config, &o).map(|run| {
            let out = &run.outcome;
            println!(
                "{:?}: T* = {}, LMI margin {:.3e}, artifacts in {}",
                out.status,
                out.length(),
                out.lmi.margin,
                run.out_dir.display()
            );
            run.exit_code()
        }),
        Command::Validate { config, design } => run_validate(config, design, &o).map(|run| {
            let fmt = |f: Option<f64>| f.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            println!(
                "{} runs ({} flagged): inside E_SI {}, inside E_app {}, report in {}",
                run.report.estimates.len(),
                run.report.flagged.len(),
                fmt(run.report.inside_id_fraction),
                fmt(run.report.inside_app_fraction),
                run.out_dir.display()
            );
            EXIT_OK
        }),
    };
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
