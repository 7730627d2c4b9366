use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhyper::linalg::Tolerances;

mod commands;

use commands::{CliError, Outcome, RunConfig};

#[derive(Parser)]
#[command(
    name = "mhyper",
    version,
    about = "Model theory for commuting m-hypercontractions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Defect spectra, hypercontraction verdicts and purity decay of a tuple.
    Classify(Common),
    /// The K_m-inner function W_T of a pure m-hypercontraction.
    Inner(Common),
    /// Rebuild a realization from a Taylor-coefficient file.
    Realize(Common),
    /// The characteristic function of a pure m-hypercontraction.
    Charfn(Common),
}

#[derive(Args)]
struct Common {
    /// Tuple file (classify, inner, charfn) or operator-function file (realize).
    input: PathBuf,
    /// Order m.
    #[arg(long, default_value_t = 1)]
    m: u32,
    /// Truncation degree N; defaults to max(2m + 4, nilpotency length).
    #[arg(long)]
    degree: Option<u32>,
    /// Tolerance override KEY=VAL (psd_slack, residual, rank_cutoff, purity_decay).
    #[arg(long = "tol", value_name = "KEY=VAL")]
    tol: Vec<String>,
    /// Number of random kernel samples.
    #[arg(long, default_value_t = 25)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here and print a summary table instead.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn tolerances(overrides: &[String]) -> Result<Tolerances, CliError> {
    let mut tol = Tolerances::default();
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("--tol expects KEY=VAL, got '{item}'")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Parse(format!("--tol {key}: '{value}' is not a number")))?;
        tol.set(key.trim(), value).map_err(CliError::Parse)?;
    }
    Ok(tol)
}

fn config(name: &'static str, c: Common) -> Result<RunConfig, CliError> {
    Ok(RunConfig {
        command: name,
        tol: tolerances(&c.tol)?,
        input: c.input,
        m: c.m,
        degree: c.degree,
        samples: c.samples,
        seed: c.seed,
        out: c.out,
    })
}

fn run(cli: Cli) -> Result<(Outcome, RunConfig), CliError> {
    let (config, handler): (RunConfig, fn(&RunConfig) -> Result<Outcome, CliError>) =
        match cli.command {
            Command::Classify(c) => (config("classify", c)?, commands::cmd_classify),
            Command::Inner(c) => (config("inner", c)?, commands::cmd_inner),
            Command::Realize(c) => (config("realize", c)?, commands::cmd_realize),
            Command::Charfn(c) => (config("charfn", c)?, commands::cmd_charfn),
        };
    let outcome = handler(&config)?;
    Ok((outcome, config))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli)
        .and_then(|(outcome, config)| commands::emit(&outcome, &config).map(|_| outcome.code))
    {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
