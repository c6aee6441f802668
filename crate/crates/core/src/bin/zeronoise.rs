use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use zeronoise::config::RunConfig;
use zeronoise::export::Format;
use zeronoise::verify::{exit_code, run_all_with, Status};
use zeronoise::{commands, Error};

#[derive(Parser)]
#[command(
    name = "zeronoise",
    version,
    about = "Small-noise limits of a 1-D diffusion: PDE, variational, Monte Carlo and bridge computations"
)]
struct Cli {
    /// TOML run configuration (defaults apply to every missing field).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for tables and report.json [default: out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the Monte Carlo streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run only the checks whose name starts with this string.
    #[arg(long, global = true)]
    only: Option<String>,
    /// Table format.
    #[arg(long, global = true, value_enum)]
    format: Option<TableFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the backward equation and export u, q and its derivatives.
    Solve,
    /// Solve the deterministic variational problem.
    Classical,
    /// Simulate controlled and free ensembles and evaluate the estimators.
    Simulate,
    /// Tail probabilities of the diffusion pinned at the end point.
    Bridge,
    /// Run the verification suite and write report.json.
    Verify,
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(format) = cli.format {
        cfg.format = match format {
            TableFormat::Csv => Format::Csv,
            TableFormat::Json => Format::Json,
        };
    }
    cfg.out_dir = cli
        .out
        .clone()
        .or(cfg.out_dir)
        .or_else(|| Some(PathBuf::from("out")));
    cfg.validate()?;
    Ok(cfg)
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if matches!(err, Error::Config(_)) {
        2
    } else {
        1
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::Solve => commands::solve(&cfg),
        Command::Classical => commands::classical(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Bridge => commands::bridge(&cfg),
        Command::Verify => {
            let mut print = |r: &zeronoise::verify::VerificationReport| {
                let tag = match r.status {
                    Status::Pass => "PASS",
                    Status::Fail => "FAIL",
                    Status::Skipped => "SKIP",
                };
                println!("{tag:4}  {}", r.check_name);
            };
            return match run_all_with(&cfg, cli.only.as_deref(), &mut print) {
                Ok(reports) => {
                    let dir = cfg
                        .out_dir
                        .as_deref()
                        .unwrap_or(std::path::Path::new("out"));
                    println!("report: {}", dir.join("report.json").display());
                    ExitCode::from(exit_code(&reports) as u8)
                }
                Err(e) => fail(&e),
            };
        }
    };
    match outcome {
        Ok(o) => {
            for line in o.lines {
                println!("{line}");
            }
            for a in o.artifacts {
                println!("wrote {a}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
