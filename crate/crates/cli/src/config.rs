//! Command-line flags, the JSON config file and their merge.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use zeco_core::engine::{ComputeCosts, DEFAULT_FLOP_RATE};
use zeco_core::{ModelDims, NetConfig, PipelineConfig, Precision, ShardLayout, StrategyKind};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "zeco", version, about = "Sequence-parallel linear attention on a simulated cluster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Cross-strategy equivalence and gradient checks at the configured size.
    Verify,
    /// Virtual-time makespans, exposed communication and ledger volumes.
    Bench,
    /// Analytical time models and the volume/compute table.
    Cost,
    /// Table volumes next to volumes measured on the ledger.
    Volume,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Bench => "bench",
            Command::Cost => "cost",
            Command::Volume => "volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Zeco,
    Lasp1,
    Lasp2,
    Single,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Zeco => StrategyKind::ZeCO,
            StrategyArg::Lasp1 => StrategyKind::Lasp1,
            StrategyArg::Lasp2 => StrategyKind::Lasp2,
            StrategyArg::Single => StrategyKind::SingleDevice,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

/// Every flag is optional so that unset flags fall through to the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long, global = true, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Number of ranks P.
    #[arg(long, global = true)]
    pub ranks: Option<usize>,
    /// Tokens per rank L.
    #[arg(long, global = true)]
    pub seq_per_rank: Option<usize>,
    /// Chunk length C.
    #[arg(long, global = true)]
    pub chunk: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub dk: Option<usize>,
    #[arg(long, global = true)]
    pub dv: Option<usize>,
    /// All-Scan pipeline blocks K.
    #[arg(long, global = true)]
    pub pipeline_blocks: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Per-message latency α in virtual seconds.
    #[arg(long, global = true)]
    pub net_alpha: Option<f64>,
    /// Bandwidth β in elements per virtual second.
    #[arg(long, global = true)]
    pub net_beta: Option<f64>,
    /// Flops per virtual second used to price kernel work.
    #[arg(long, global = true)]
    pub flop_rate: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Report destination; stdout when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Flat JSON object with the same keys as the long flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Rank counts to sweep (bench, cost, volume); defaults to --ranks.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep_ranks: Option<Vec<usize>>,
    /// Pipeline block counts to sweep (bench); defaults to --pipeline-blocks.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep_blocks: Option<Vec<usize>>,
    /// Bench only the collectives, skipping full strategy runs.
    #[arg(long, global = true)]
    pub collectives_only: bool,
}

/// Config file contents: the flag names as keys, all optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub strategy: Option<StrategyKind>,
    pub ranks: Option<usize>,
    pub seq_per_rank: Option<usize>,
    pub chunk: Option<usize>,
    pub heads: Option<usize>,
    pub dk: Option<usize>,
    pub dv: Option<usize>,
    pub pipeline_blocks: Option<usize>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub net_alpha: Option<f64>,
    pub net_beta: Option<f64>,
    pub flop_rate: Option<f64>,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
    pub warmup: Option<usize>,
    pub repeats: Option<usize>,
    pub sweep_ranks: Option<Vec<usize>>,
    pub sweep_blocks: Option<Vec<usize>>,
    pub collectives_only: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

/// Fully resolved and validated experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub dims: ModelDims,
    pub ranks: usize,
    pub layout: ShardLayout,
    pub pipe: PipelineConfig,
    pub seed: u64,
    pub precision: Precision,
    pub net: NetConfig,
    pub flop_rate: f64,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub warmup: usize,
    pub repeats: usize,
    pub sweep_ranks: Vec<usize>,
    pub sweep_blocks: Vec<usize>,
    pub collectives_only: bool,
}

impl ExperimentConfig {
    /// Flags override file values, file values override defaults.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let ranks = flags.ranks.or(file.ranks).unwrap_or(4);
        let blocks = flags.pipeline_blocks.or(file.pipeline_blocks).unwrap_or(4);
        let dims = ModelDims::new(
            flags.heads.or(file.heads).unwrap_or(2),
            flags.dk.or(file.dk).unwrap_or(64),
            flags.dv.or(file.dv).unwrap_or(64),
        )?;
        let layout = ShardLayout::new(
            flags.seq_per_rank.or(file.seq_per_rank).unwrap_or(4096),
            flags.chunk.or(file.chunk).unwrap_or(64),
        )?;
        if ranks == 0 {
            return Err(CliError::Usage("--ranks must be at least 1".into()));
        }
        let pipe = PipelineConfig::new(blocks)?;
        pipe.check(dims.key_dim)?;
        let net = NetConfig::new(
            flags.net_alpha.or(file.net_alpha).unwrap_or(0.0),
            flags.net_beta.or(file.net_beta).unwrap_or(1e9),
        )?;
        let flop_rate = flags.flop_rate.or(file.flop_rate).unwrap_or(DEFAULT_FLOP_RATE);
        ComputeCosts::from_flops(dims, layout.chunk_len, flop_rate)?;
        let sweep_ranks = flags.sweep_ranks.clone().or(file.sweep_ranks).unwrap_or_else(|| vec![ranks]);
        let sweep_blocks = flags.sweep_blocks.clone().or(file.sweep_blocks).unwrap_or_else(|| vec![blocks]);
        if sweep_ranks.is_empty() || sweep_ranks.contains(&0) {
            return Err(CliError::Usage("--sweep-ranks needs positive rank counts".into()));
        }
        for &k in &sweep_blocks {
            PipelineConfig::new(k)?.check(dims.key_dim)?;
        }
        if sweep_blocks.is_empty() {
            return Err(CliError::Usage("--sweep-blocks needs at least one value".into()));
        }
        let repeats = flags.repeats.or(file.repeats).unwrap_or(1);
        if repeats == 0 {
            return Err(CliError::Usage("--repeats must be at least 1".into()));
        }
        Ok(ExperimentConfig {
            strategy: flags.strategy.map(StrategyKind::from).or(file.strategy).unwrap_or(StrategyKind::ZeCO),
            dims,
            ranks,
            layout,
            pipe,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            precision: flags.precision.map(Precision::from).or(file.precision).unwrap_or(Precision::F64),
            net,
            flop_rate,
            format: flags.format.or(file.format).unwrap_or(Format::Csv),
            output: flags.output.clone().or(file.output),
            warmup: flags.warmup.or(file.warmup).unwrap_or(0),
            repeats,
            sweep_ranks,
            sweep_blocks,
            collectives_only: flags.collectives_only || file.collectives_only.unwrap_or(false),
        })
    }

    pub fn costs(&self) -> ComputeCosts {
        ComputeCosts::from_flops(self.dims, self.layout.chunk_len, self.flop_rate).expect("validated in resolve")
    }
}
