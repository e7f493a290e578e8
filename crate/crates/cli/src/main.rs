use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSub};
use eigenmatch_cli::{run, run_reproduce, CliError, JobConfig, RunReport, Subcommand};

#[derive(Parser)]
#[command(name = "eigenmatch", version, about = "Matching transformations from Koopman eigenfunctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct JobArgs {
    /// JSON job file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `io`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ClapSub)]
enum Command {
    /// Sample eigenfunctions on a grid.
    Keig(JobArgs),
    /// Match two eigenfunction stacks and measure the conjugacy defect.
    Match(JobArgs),
    /// Fit a Koopman matrix and its left spectrum.
    Edmd(JobArgs),
    /// Reconstruct h from two Koopman matrices and a matching point.
    Edmdm(JobArgs),
    /// Train a shared neural dictionary.
    Train(JobArgs),
    /// Continue a level set of a Laplace average.
    Levelset(JobArgs),
    /// Conjugacy defect of a given map.
    Defect(JobArgs),
    /// Run a pinned example and compare with its known answer.
    Reproduce {
        /// example1..example6, appendixB, appendixD or vdp.
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn job(sub: Subcommand, a: &JobArgs) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", a.config.display())))?;
    let job = JobConfig::parse(&text, a.seed, a.out.as_deref())?;
    if job.subcommand != sub {
        return Err(CliError::invalid(format!(
            "config is a `{}` job, not `{}`",
            job.subcommand.name(),
            sub.name()
        )));
    }
    run(&job)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Keig(a) => job(Subcommand::Keig, a),
        Command::Match(a) => job(Subcommand::Match, a),
        Command::Edmd(a) => job(Subcommand::Edmd, a),
        Command::Edmdm(a) => job(Subcommand::Edmdm, a),
        Command::Train(a) => job(Subcommand::Train, a),
        Command::Levelset(a) => job(Subcommand::Levelset, a),
        Command::Defect(a) => job(Subcommand::Defect, a),
        Command::Reproduce { name, out, seed } => run_reproduce(name, *seed, out),
    };
    match result {
        Ok(report) => {
            for c in &report.checks {
                eprintln!("{c}");
            }
            eprintln!("{}: {:?} in {:.3} s", report.job, report.status, report.wall_time.as_secs_f64());
            match serde_json::to_string_pretty(&report) {
                Ok(s) => println!("{s}"),
                Err(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
