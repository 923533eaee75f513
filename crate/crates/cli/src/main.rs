// `!(a <= b)` is used on purpose so that NaN fails the comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod checks;
mod commands;
mod config;
mod experiment;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::experiment::Experiment;
use crate::output::OutDir;

/// Process exit status with its diagnostic.
#[derive(Debug)]
pub struct ExitError {
    pub code: u8,
    pub message: String,
}

impl ExitError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for ExitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ExitError {}

/// Exit 2 for numerical failures anywhere in the chain, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExitError>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<branchflow::Error>() {
            if matches!(e, branchflow::Error::BlowUp(_) | branchflow::Error::Unstable(_) | branchflow::Error::NonFinite(_)) {
                return 2;
            }
        }
    }
    1
}

#[derive(Parser)]
#[command(name = "branchflow", version, about = "Controlled branching mean-field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `outputs.dir` and BRANCHFLOW_OUT.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides `budget.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Exit 3 when the Picard iteration does not converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati system of an LQ model.
    LqSolve(Common),
    /// Solve the flow and simulate the controlled forest.
    Simulate(Common),
    /// Run the configured check suite.
    Verify(Common),
    /// Solve the linear Fokker-Planck equation on a 1-D grid.
    Fp(Common),
    /// Run only the DPP checks (a default one when none are listed).
    DppCheck(Common),
}

fn default_out() -> PathBuf {
    std::env::var_os("BRANCHFLOW_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (name, common) = match &cli.command {
        Command::LqSolve(c) => ("lq-solve", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Verify(c) => ("verify", c),
        Command::Fp(c) => ("fp", c),
        Command::DppCheck(c) => ("dpp-check", c),
    };
    let workers = common.workers.unwrap_or_else(rayon::current_num_threads);
    if let Some(w) = common.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global()?;
    }
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.budget.seed = seed;
    }
    config.budget.strict |= common.strict;
    let dir = common.out.clone().or_else(|| config.outputs.dir.clone().map(PathBuf::from)).unwrap_or_else(default_out);
    let exp = Experiment::new(config)?;
    let mut out = OutDir::create(&dir, &exp.hash)?;
    let outcome = match &cli.command {
        Command::LqSolve(_) => commands::lq_solve(&exp, &mut out).map(|_| None),
        Command::Simulate(_) => commands::simulate(&exp, &mut out),
        Command::Fp(_) => commands::fp(&exp, &mut out).map(|_| None),
        Command::Verify(_) | Command::DppCheck(_) => {
            let only = matches!(cli.command, Command::DppCheck(_)).then(|| ("dpp", commands::default_dpp()));
            let summary = commands::verify(&exp, &mut out, only)?;
            for r in &summary.reports {
                println!("{}", r.line());
            }
            println!("{} passed, {} failed", summary.passed, summary.failed);
            Ok((!summary.all_pass).then(|| ExitError::new(4, format!("{} check(s) failed", summary.failed))))
        }
    }?;
    out.finish(name, workers)?;
    match outcome {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
