use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coalition_cli::{report, run, validate, CliError, RunOptions};

#[derive(Parser)]
#[command(
    name = "coalition",
    version,
    about = "Coalitional (Möbius) decompositions of model quantities of interest"
)]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, env = "COALITION_THREADS")]
    threads: Option<usize>,
    /// Directory for report files (defaults to the config file's directory).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Suppress the summary table.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a decomposition and write its report.
    Run { config: PathBuf },
    /// Check a configuration without sampling.
    Validate { config: PathBuf },
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate { config } => {
            validate(config)?;
            println!("ok");
        }
        Command::Run { config } => {
            let options = RunOptions {
                output_dir: cli.output_dir.clone(),
            };
            let outcome = run(config, &options)?;
            if !cli.quiet {
                print!("{}", report::summary(&outcome.report));
                println!("report: {}", outcome.report_path.display());
                for path in outcome.csv_path.iter().chain(&outcome.shapley_path) {
                    println!("csv: {}", path.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(CliError::config("threads", "--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(CliError::config("threads", e.to_string())),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
