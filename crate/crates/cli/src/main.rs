//! `quartzion`: simulate, fit and check quartz/ion spectra.

mod check;
mod fit;
mod run;
mod simulate;
mod trap;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quartzion::io::Stage;

use crate::run::Failure;

#[derive(Parser)]
#[command(
    name = "quartzion",
    version,
    about = "Quartz resonator coupled to trapped ions: spectra, fits and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write closed-form and Monte-Carlo spectra for each t0.
    Simulate(Common),
    /// Run the fit pipeline on spectrum files.
    Fit(FitArgs),
    /// Compare the model against the independent oracles.
    Check(CheckArgs),
    /// Print the trap eigenfrequencies and the coupling constant.
    TrapFreqs(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML); the published operating point when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    config: ConfigArg,
    /// Base seed of the random number generators.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Window starts, comma separated; seconds unless suffixed with `ms`.
    #[arg(long, value_name = "LIST", value_delimiter = ',', value_parser = run::parse_t0)]
    t0: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Background,
    Coupling,
    Full,
    All,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Background => Stage::Background,
            StageArg::Coupling => Stage::Coupling,
            StageArg::Full => Stage::Full,
            StageArg::All => Stage::All,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Pipeline stage(s) to run.
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    /// Ion-free spectrum files for the background stage.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    background: Vec<PathBuf>,
    /// Spectrum files with ions, one per t0.
    #[arg(value_name = "SPECTRA")]
    spectra: Vec<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Tolerance applied to every check instead of its own.
    #[arg(long)]
    tolerance: Option<f64>,
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(c) => simulate::run(&run::Context::new(&c)?),
        Command::Fit(f) => {
            let mut ctx = run::Context::new(&f.common)?;
            if let Some(s) = f.stage {
                ctx.config.fit.stage = s.into();
            }
            fit::run(&ctx, &f.background, &f.spectra)
        }
        Command::Check(c) => check::run(&c),
        Command::TrapFreqs(c) => trap::run(&c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
