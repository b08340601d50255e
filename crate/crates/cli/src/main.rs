//! `idc`: simulate recordings, run the idealise / discretise / infer
//! pipeline, check model adequacy, and reproduce the simulation studies.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 I/O failure, 4 stage
//! failure (artifacts of earlier stages are kept).

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use idc_core::infer::BranchChoice;
use idc_core::signal::{KernelKind, NoiseSpec};

use commands::Context;
use config::{parse_kernel, parse_noise, parse_sweep, parse_theta, RunConfig};
use error::{CliError, CliResult};

const DEFAULT_OUT_DIR: &str = "idc-out";

#[derive(Parser)]
#[command(
    name = "idc",
    version,
    about = "Idealisation, discretisation and cooperativity inference for ion-channel recordings"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "IDC_OUT_DIR")]
    out: Option<PathBuf>,
    /// Significance level of the idealisation.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Fixed number of channels (skips selection).
    #[arg(long = "L", global = true)]
    channels: Option<usize>,
    /// Upper bound for the selected number of channels.
    #[arg(long = "max-L", global = true)]
    max_l: Option<usize>,
    /// Worker threads for repetitions.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Args, Default)]
struct DataArgs {
    /// Input CSV.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Sampling rate in Hz (otherwise from metadata or the time column).
    #[arg(long)]
    rate: Option<f64>,
    /// identity, bspline2, bessel:ORDER:HZ or custom:TAPS.
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    gap_factor: Option<f64>,
    /// Relative tolerance of the cooperativity verdict.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Known all-closed conductance.
    #[arg(long, allow_negative_numbers = true)]
    baseline: Option<f64>,
    #[arg(long, value_enum)]
    branch: Option<Branch>,
    /// Histogram bins.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Branch {
    Auto,
    Plus,
    Minus,
}

#[derive(Args)]
struct SimulateArgs {
    /// zero, positive or negative.
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated (lambda_0..lambda_{L-1}, eta_1..eta_L).
    #[arg(long, value_parser = parse_theta)]
    theta: Option<Vec<f64>>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// gaussian:SIGMA, cauchy:SCALE or mixture:W:SIGMA:SCALE, optional +filtered.
    #[arg(long, value_parser = parse_noise)]
    noise: Option<NoiseSpec>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    offset: Option<f64>,
    #[arg(long)]
    spacing: Option<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fit each L in LO:HI or a comma list.
    #[arg(long = "L-sweep", value_parser = |s: &str| parse_sweep(s).map(Sweep))]
    l_sweep: Option<Sweep>,
}

/// Parsed `--L-sweep`; clap treats a bare `Vec` as repeated values.
#[derive(Clone)]
struct Sweep(Vec<usize>);

#[derive(Args)]
struct DwellArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated states (default: all).
    #[arg(long, value_delimiter = ',')]
    states: Option<Vec<u32>>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// fig-errors-zero, fig-errors-pos, fig-errors-neg, fig-L-hist, fig-ratio-hist or fdr-check.
    study: String,
    #[arg(long)]
    reps: Option<usize>,
    /// Recording length.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a recording with ground truth.
    Simulate(SimulateArgs),
    /// Idealise a recording.
    Idealise(DataArgs),
    /// Map an idealisation to open-channel counts.
    Discretise(DataArgs),
    /// Fit the coupled Markov model to a count trace.
    Infer(DataArgs),
    /// Run idealise, discretise and infer on a recording.
    Pipeline(PipelineArgs),
    /// Chi-square test of the Markov property of a count trace.
    MarkovTest(DataArgs),
    /// Dwell-time histograms with exponential fits.
    Dwell(DwellArgs),
    /// Run a simulation study.
    Reproduce(ReproduceArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Idealise(_) => "idealise",
            Command::Discretise(_) => "discretise",
            Command::Infer(_) => "infer",
            Command::Pipeline(_) => "pipeline",
            Command::MarkovTest(_) => "markov-test",
            Command::Dwell(_) => "dwell",
            Command::Reproduce(_) => "reproduce",
        }
    }
}

fn data_overlay(d: &DataArgs, cfg: &mut RunConfig) {
    cfg.input = d.input.clone();
    cfg.sample_rate = d.rate;
    cfg.kernel = d.kernel.clone();
    cfg.gap_factor = d.gap_factor;
    cfg.tolerance = d.tolerance;
    cfg.baseline = d.baseline;
    cfg.branch = d.branch.map(|b| match b {
        Branch::Auto => BranchChoice::Auto,
        Branch::Plus => BranchChoice::Plus,
        Branch::Minus => BranchChoice::Minus,
    });
    cfg.bins = d.bins;
}

/// Settings given on the command line.
fn flag_config(cli: &Cli) -> RunConfig {
    let g = &cli.global;
    let mut cfg = RunConfig {
        seed: g.seed,
        alpha: g.alpha,
        channels: g.channels,
        max_l: g.max_l,
        threads: g.threads,
        plots: g.plots.then_some(true),
        ..Default::default()
    };
    match &cli.command {
        Command::Simulate(a) => {
            cfg.scenario = a.scenario.clone();
            cfg.theta = a.theta.clone();
            cfg.n = a.n;
            cfg.noise = a.noise.clone();
            cfg.kernel = a.kernel.clone();
            cfg.sample_rate = a.rate;
            cfg.offset = a.offset;
            cfg.spacing = a.spacing;
        }
        Command::Idealise(d) | Command::Discretise(d) | Command::Infer(d) | Command::MarkovTest(d) => {
            data_overlay(d, &mut cfg)
        }
        Command::Pipeline(a) => {
            data_overlay(&a.data, &mut cfg);
            cfg.l_sweep = a.l_sweep.clone().map(|s| s.0);
        }
        Command::Dwell(a) => {
            data_overlay(&a.data, &mut cfg);
            cfg.states = a.states.clone();
        }
        Command::Reproduce(a) => {
            cfg.reps = a.reps;
            cfg.n = a.n;
            cfg.kernel = a.kernel.clone();
            cfg.sample_rate = a.rate;
        }
    }
    cfg
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let name = cli.command.name();
    let mut cfg = file.overlay(flag_config(&cli));
    commands::resolve(name, &mut cfg);
    let cfg = cfg.with_defaults();
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if !matches!(cli.command, Command::Simulate(_) | Command::Reproduce(_)) {
        cfg.pipeline_options()?;
    }
    let out = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let ctx = Context { cfg, out };
    ctx.snapshot(name)?;
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::Idealise(_) => commands::idealise(&ctx),
        Command::Discretise(_) => commands::discretise(&ctx),
        Command::Infer(_) => commands::infer(&ctx),
        Command::Pipeline(_) => commands::pipeline(&ctx),
        Command::MarkovTest(_) => commands::markov_test(&ctx),
        Command::Dwell(_) => commands::dwell(&ctx),
        Command::Reproduce(a) => commands::reproduce(&ctx, &a.study),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
