//! `spinscope` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 tolerance failure, 3 i/o error.

mod commands;
mod error;
mod grid;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "spinscope", version, about = "Nuclear-spin signals, oracle checks and Fisher analysis")]
struct Cli {
    /// Worker threads for grid evaluation (results do not depend on it).
    #[arg(long, global = true, env = "SPINSCOPE_THREADS")]
    threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a (noisy) probability trace.
    Simulate(SimulateArgs),
    /// Compare closed forms against the density-matrix oracle.
    OracleCheck(OracleCheckArgs),
    /// Fisher information, Cramér-Rao bounds and detectability.
    Fisher(FisherArgs),
    /// ESEEM spectra, τ-sweep correlation and frequency pairing.
    Spectrum(SpectrumArgs),
    /// Register file utilities.
    Register {
        #[command(subcommand)]
        action: RegisterCmd,
    },
}

#[derive(Subcommand, Debug)]
enum RegisterCmd {
    /// Check a register file and print its derived frequencies.
    Validate {
        #[arg(long)]
        register: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ProtocolArgs {
    /// ramsey, hahn, dd, 5p_eseem or dd_eseem.
    #[arg(long)]
    pub protocol: String,
    /// Sweep grid start:stop:step; units s (default), ms, us, ns.
    #[arg(long)]
    pub grid: Option<String>,
    /// π pulses for dd (default 16) or per block for dd_eseem (default 72).
    #[arg(long)]
    pub pulses: Option<usize>,
    /// First interpulse time of the correlation sequences.
    #[arg(long)]
    pub tau1: Option<String>,
    /// Second interpulse time of the correlation sequences.
    #[arg(long)]
    pub tau2: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct NoiseArgs {
    /// Shots per sweep point.
    #[arg(long, default_value_t = 10_000)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mean photons per shot from the bright state.
    #[arg(long, default_value_t = 3.0)]
    pub photons_bright: f64,
    /// Mean photons per shot from the dark state.
    #[arg(long, default_value_t = 0.1)]
    pub photons_dark: f64,
    /// Write exact probabilities instead of sampled estimates.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub register: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Leave out T1/T2 decay.
    #[arg(long)]
    pub no_decay: bool,
    #[arg(long, default_value = "spinscope-out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OracleCheckArgs {
    #[arg(long)]
    pub register: PathBuf,
    /// Largest accepted |closed form - oracle|.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// τ grid for Ramsey, echo and DD (default 200 points over 0.05-20 us).
    #[arg(long)]
    pub grid: Option<String>,
    /// Write a JSON report into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negative control: perturb the closed form of one protocol.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum MetricArg {
    PerType,
    Euclidean,
}

#[derive(Args, Debug)]
pub struct FisherArgs {
    #[arg(long)]
    pub register: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Repetitions entering the Cramér-Rao bound.
    #[arg(long, default_value_t = 10_000)]
    pub reps: u64,
    /// Distance used by the detectability rule.
    #[arg(long, value_enum, default_value_t = MetricArg::PerType)]
    pub metric: MetricArg,
    /// Fixed finite-difference step in Hz (default max(10 Hz, 1e-4|A|)).
    #[arg(long)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub no_decay: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum WindowArg {
    None,
    Hann,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub register: PathBuf,
    /// Correlation protocol (5p_eseem or dd_eseem) with T grid.
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Sweep τ1 = τ2 over start:stop:step (default 10us:500us:10us unless --tau1 is given).
    #[arg(long)]
    pub tau_sweep: Option<String>,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    pub window: WindowArg,
    #[arg(long, default_value_t = 4)]
    pub zero_pad: usize,
    /// Peak threshold relative to the largest line.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub no_decay: bool,
    #[arg(long, default_value = "spinscope-out")]
    pub out: PathBuf,
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    let threads = rayon::current_num_threads();
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, threads),
        Command::OracleCheck(a) => commands::oracle_check(&a),
        Command::Fisher(a) => commands::fisher(&a),
        Command::Spectrum(a) => commands::spectrum(&a),
        Command::Register { action: RegisterCmd::Validate { register } } => commands::register_validate(&register),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
