//! Argument parsing and dispatch.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dprec_core::accountant::OrderGrid;
use dprec_core::sim::{MeanEstimationConfig, PriorMean, SamplingMode};

use crate::commands::{self, AccountQuery, CodecParams};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::presets;

pub const OUTPUT_DIR_ENV: &str = "DPREC_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "dprec",
    version,
    about = "Differentially private relative entropy coding for federated learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a federated simulation and write its metrics CSV and manifest.
    Simulate(SimulateArgs),
    /// Evaluate the privacy accountant for a DP-REC configuration.
    Account(AccountArgs),
    /// Encode a vector into a wire message or decode one back.
    Codec(CodecArgs),
    /// Estimate the mean of unit vectors from one message per sample.
    MeanEstimate(MeanEstimateArgs),
    /// Tabulate final metrics of several runs.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset instead of a configuration file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides `output.dir`.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
    /// Overrides `federation.master_seed`.
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
    /// List preset names and exit.
    #[arg(long)]
    pub list_presets: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Sampling {
    WithReplacement,
    WithoutReplacement,
}

impl From<Sampling> for SamplingMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::WithReplacement => SamplingMode::WithReplacement,
            Sampling::WithoutReplacement => SamplingMode::WithoutReplacement,
        }
    }
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    /// Rounds T.
    #[arg(long)]
    pub rounds: u64,
    /// Clients per round B.
    #[arg(long)]
    pub per_round: u64,
    /// Population size N.
    #[arg(long)]
    pub clients: u64,
    /// Prior standard deviation.
    #[arg(long)]
    pub sigma: f64,
    /// Clip threshold as a multiple of sigma.
    #[arg(long, default_value_t = 1.0)]
    pub clip_mult: f64,
    #[arg(long)]
    pub bits_per_group: u64,
    /// Groups per message.
    #[arg(long, default_value_t = 1)]
    pub groups: u64,
    /// Defaults to 1 / N^1.1.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Comma-separated Rényi orders; overrides --max-order.
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<u32>>,
    #[arg(long, default_value_t = 64)]
    pub max_order: u32,
    #[arg(long, value_enum, default_value_t = Sampling::WithReplacement)]
    pub sampling: Sampling,
    /// Solve for the largest clip multiplier meeting this epsilon.
    #[arg(long)]
    pub target_epsilon: Option<f64>,
    /// Also report the subsampled-Gaussian baseline at this noise multiplier.
    #[arg(long)]
    pub baseline_noise_mult: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    #[command(subcommand)]
    pub op: CodecOp,
}

#[derive(Debug, Args)]
pub struct CodecShape {
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_mult: f64,
    #[arg(long)]
    pub bits: u32,
    /// Comma-separated group lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub groups: Vec<usize>,
}

impl From<&CodecShape> for CodecParams {
    fn from(s: &CodecShape) -> Self {
        CodecParams {
            sigma: s.sigma,
            clip_mult: s.clip_mult,
            bits: s.bits,
            groups: s.groups.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum CodecOp {
    /// Little-endian f64 vector file to message bytes.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Shared seed written into the message.
        #[arg(long)]
        seed: u64,
        /// Seed of the private categorical stream.
        #[arg(long)]
        private_seed: u64,
        #[command(flatten)]
        shape: CodecShape,
    },
    /// Message bytes to a little-endian f64 vector file.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        shape: CodecShape,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Prior {
    Zero,
    Informed,
}

#[derive(Debug, Args)]
pub struct MeanEstimateArgs {
    #[arg(long, default_value_t = 200)]
    pub dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub bits: u32,
    #[arg(long, value_enum, default_value_t = Prior::Zero)]
    pub prior: Prior,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Metrics CSVs written by `simulate`.
    pub csvs: Vec<PathBuf>,
    /// Position of the baseline run in the list.
    #[arg(long, default_value_t = 0)]
    pub baseline: usize,
    /// Where `summary.csv` goes.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
}

/// Executes a parsed command and returns what it prints on stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Account(a) => account(a),
        Command::Codec(a) => codec(a),
        Command::MeanEstimate(a) => mean_estimate(a),
        Command::Summarize(a) => {
            let (_, text) = commands::summarize(&a.csvs, a.baseline, a.output_dir.as_deref())?;
            Ok(text)
        }
    }
}

fn simulate(a: SimulateArgs) -> CliResult<String> {
    if a.list_presets {
        return Ok(presets::names().join("\n") + "\n");
    }
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => presets::preset(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset `{name}`; known: {}",
                presets::names().join(", ")
            ))
        })?,
        _ => {
            return Err(CliError::Usage(
                "simulate needs --config or --preset".into(),
            ))
        }
    };
    if let Some(seed) = a.master_seed {
        cfg.federation.master_seed = seed;
    }
    if let Some(dir) = a.output_dir {
        cfg.output.dir = dir;
    }
    if a.print_config {
        return Ok(cfg.to_toml());
    }
    let dir = cfg.output.dir.clone();
    Ok(commands::simulate(&cfg, &dir, a.preset.as_deref())?.summary_record())
}

fn account(a: AccountArgs) -> CliResult<String> {
    let orders = match a.orders {
        Some(list) => OrderGrid::new(list)?,
        None => OrderGrid::up_to(a.max_order)?,
    };
    let query = AccountQuery {
        rounds: a.rounds,
        per_round: a.per_round,
        n_clients: a.clients,
        sigma: a.sigma,
        clip_mult: a.clip_mult,
        bits_per_group: a.bits_per_group,
        groups: a.groups,
        delta: a.delta,
        orders,
        sampling: a.sampling.into(),
        target_epsilon: a.target_epsilon,
        baseline_noise_mult: a.baseline_noise_mult,
    };
    Ok(query.run()?.to_record())
}

fn codec(a: CodecArgs) -> CliResult<String> {
    match a.op {
        CodecOp::Encode {
            input,
            output,
            seed,
            private_seed,
            shape,
        } => {
            let vector = commands::read_vector(&input)?;
            let bytes = commands::codec_encode(&(&shape).into(), &vector, seed, private_seed)?;
            fs::write(&output, &bytes)?;
            Ok(commands::record(&[("bytes", bytes.len().to_string())]))
        }
        CodecOp::Decode {
            input,
            output,
            shape,
        } => {
            let bytes = fs::read(&input)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
            let values = commands::codec_decode(&(&shape).into(), &bytes)?;
            commands::write_vector(&output, &values)?;
            Ok(commands::record(&[("values", values.len().to_string())]))
        }
    }
}

fn mean_estimate(a: MeanEstimateArgs) -> CliResult<String> {
    let cfg = MeanEstimationConfig {
        dim: a.dim,
        n_samples: a.samples,
        bits: a.bits,
        prior: match a.prior {
            Prior::Zero => PriorMean::Zero,
            Prior::Informed => PriorMean::Informed,
        },
        sigma: a.sigma,
        spread: a.spread,
        seed: a.seed,
    };
    let est = commands::mean_estimate(&cfg)?;
    Ok(commands::mean_estimate_record(&cfg, &est))
}
