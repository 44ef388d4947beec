use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfveb::experiment::{self, ExperimentConfig, Overrides, RunOptions};
use mfveb::Error;

#[derive(Parser)]
#[command(
    name = "mfveb",
    version,
    about = "Multi-fidelity Bayesian recurrent surrogate experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark datasets of every seed.
    GenData(Common),
    /// Train and evaluate the configured model for every seed.
    Run(Common),
    /// Budget sweep over the configured LF fractions.
    Sweep(Common),
    /// Aggregate the metrics tables of a run directory.
    Report {
        /// Run or sweep output directory.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Validate and print the plan; write nothing.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn options(common: &Common) -> Result<RunOptions, Error> {
    if common.jobs == 0 {
        return Err(Error::config("--jobs", "must be at least 1"));
    }
    Ok(RunOptions {
        jobs: common.jobs,
        deterministic: experiment::deterministic_from_env()?,
    })
}

fn print_rows(path: &Path) {
    println!("wrote {}", path.display());
}

fn dry_run(c: &Common, verb: &str) -> Result<(), Error> {
    let cfg = load(c)?;
    options(c)?;
    println!("{}", experiment::describe(&cfg, verb)?);
    Ok(())
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Report { dir } => {
            let summary = experiment::report(&dir)?;
            print!("{}", experiment::summary_table(&summary));
            println!("wrote {}", dir.join("summary.csv").display());
            println!("wrote {}", dir.join("long.csv").display());
            Ok(())
        }
        Command::GenData(c) | Command::Run(c) if c.dry_run => dry_run(&c, "run"),
        Command::Sweep(c) if c.dry_run => dry_run(&c, "sweep"),
        Command::GenData(c) => {
            let cfg = load(&c)?;
            let out = cfg.out_dir()?;
            experiment::gen_data(&cfg, &out, options(&c)?)?;
            println!("wrote datasets to {}", out.display());
            Ok(())
        }
        Command::Run(c) => {
            let cfg = load(&c)?;
            let out = cfg.out_dir()?;
            let res = experiment::run(&cfg, &out, options(&c)?)?;
            print_rows(&res.table);
            Ok(())
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            cfg.sweep_spec()?;
            let out = cfg.out_dir()?;
            let res = experiment::sweep(&cfg, &out, options(&c)?)?;
            print_rows(&res.table);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
