//! `qdtt`: simulate time-tagged pair streams, correlate them and run the
//! tomography, efficiency and interferometry analyses from the command line.

mod commands;
mod io;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::io::UsageError;

#[derive(Parser, Debug)]
#[command(name = "qdtt", version, about = "Entangled photon pair stream simulation and analysis")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "QDTT_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a time-tag stream from a cascade configuration.
    Simulate(SimulateArgs),
    /// Correlate two channels, or assemble the 36-entry basis matrix.
    Correlate(CorrelateArgs),
    /// Negativity and density matrices from a correlation matrix directory.
    Tomography(TomographyArgs),
    /// Excitation and detection efficiencies from singles and pair rates.
    Estimate(EstimateArgs),
    /// Fine structure splitting from polarization-resolved emission energies.
    FssFit(FssFitArgs),
    /// XX, X and conditional X lifetimes from decay curves.
    LifetimeFit(LifetimeFitArgs),
    /// On/off ratio and decay time from an auto-correlation envelope.
    BlinkingFit(BlinkingFitArgs),
    /// Pure dephasing time from co- and cross-polarized HOM histograms.
    HomFit(HomFitArgs),
    /// Coherence time from Michelson visibilities.
    MichelsonFit(MichelsonFitArgs),
    /// Simulate and analyse one figure's data set end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Cascade parameters (JSON); the reference device when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pulses: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit a sync record every this many pulses.
    #[arg(long)]
    pub sync_every: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ttr,
    Histogram,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub ch_a: u8,
    #[arg(long, default_value_t = 2)]
    pub ch_b: u8,
    #[arg(long, default_value_t = 1)]
    pub bin_ps: i64,
    #[arg(long, default_value_t = 2.0)]
    pub window_ns: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Ttr)]
    pub mode: ModeArg,
    /// Repetition rate for the sifting grid; taken from --config when given.
    #[arg(long)]
    pub rep_ghz: Option<f64>,
    /// Configuration the stream was simulated with (rate and basis schedule).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pulses in the stream; inferred from the last tag when absent.
    #[arg(long)]
    pub pulses: Option<u64>,
    /// Histogram CSV for the --ch-a/--ch-b pair.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory receiving all 36 basis-pair histograms.
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TomographyMode {
    Delay,
    Window,
}

#[derive(Args, Debug)]
pub struct TomographyArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub bin_ps: i64,
    #[arg(long, value_enum, default_value_t = TomographyMode::Delay)]
    pub mode: TomographyMode,
    /// Delay range (ps) for --mode delay.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 600.0])]
    pub range_ps: Vec<f64>,
    /// Integration half-windows (ps) for --mode window.
    #[arg(long, value_delimiter = ',')]
    pub windows_ps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Density matrix of every point as JSON.
    #[arg(long)]
    pub rho_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pulses: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FssFitArgs {
    /// CSV with columns theta_deg, energy_ev.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Per-sample energy uncertainty; estimated from residuals when absent.
    #[arg(long)]
    pub noise_uev: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LifetimeFitArgs {
    #[arg(long)]
    pub xx: PathBuf,
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub cond: PathBuf,
    /// XX and X channel jitters (FWHM, ps).
    #[arg(long, value_delimiter = ',', required = true)]
    pub jitter_ps: Vec<f64>,
    /// Excitation period, enabling the folded model.
    #[arg(long)]
    pub period_ps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub range_ps: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BlinkingFitArgs {
    /// Auto-correlation histogram CSV (bin_center_ps, counts).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub rep_ghz: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HomFitArgs {
    #[arg(long)]
    pub co: PathBuf,
    #[arg(long)]
    pub cross: PathBuf,
    #[arg(long)]
    pub t1_ps: f64,
    /// Combined jitter of the detector pair (FWHM, ps).
    #[arg(long)]
    pub jitter_ps: f64,
    #[arg(long, default_value_t = 1.58)]
    pub delay_ns: f64,
    /// Poisson bootstrap resamples for T2*; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MichelsonFitArgs {
    /// CSV with columns delay_ps, visibility.
    #[arg(long)]
    pub vis: PathBuf,
    /// Fixed beat component `amplitude:omega_rad_per_ps`, repeatable.
    #[arg(long = "beat")]
    pub beats: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3b,
    Fig3c,
    Fig4c,
    S2,
    S5,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub figure: Figure,
    /// Cascade parameters; a figure-specific preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Simulated excitation pulses.
    #[arg(long, default_value_t = 10_000_000)]
    pub scale: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &argv),
        Command::Correlate(a) => commands::correlate(&a, &argv),
        Command::Tomography(a) => commands::tomography(&a, &argv),
        Command::Estimate(a) => commands::estimate(&a, &argv),
        Command::FssFit(a) => commands::fss_fit(&a, &argv),
        Command::LifetimeFit(a) => commands::lifetime_fit(&a, &argv),
        Command::BlinkingFit(a) => commands::blinking_fit(&a, &argv),
        Command::HomFit(a) => commands::hom_fit(&a, &argv),
        Command::MichelsonFit(a) => commands::michelson_fit(&a, &argv),
        Command::Reproduce(a) => reproduce::run(&a, &argv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 })
        }
    }
}
