use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmsfem::config::RunConfig;
use gmsfem::study;

#[derive(Parser)]
#[command(version, about = "Multiscale solver for -div(exp(kappa u) grad u) = f")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the permeability field as text and PGM
    Genfield(Args),
    /// Fine-scale Picard reference solve
    Solvefine(Args),
    /// One multiscale solve with the first configured online dimension
    Solve(Args),
    /// Online-dimension sweep with error report
    Study(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON configuration file
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (Command::Genfield(args) | Command::Solvefine(args) | Command::Solve(args) | Command::Study(args)) = &cli.command;
    let result = RunConfig::load(&args.config).and_then(|cfg| {
        let out = args.output.as_deref();
        match &cli.command {
            Command::Genfield(_) => study::cmd_genfield(&cfg, out).map(|paths| {
                for p in paths {
                    println!("{}", p.display());
                }
            }),
            Command::Solvefine(_) => study::cmd_solvefine(&cfg, out)
                .map(|s| println!("fine solve converged in {} iterations", s.trace.len())),
            Command::Solve(_) => study::cmd_solve(&cfg, out).map(|r| print!("{}", r.to_csv())),
            Command::Study(_) => study::cmd_study(&cfg, out).map(|o| print!("{}", o.report.to_csv())),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
